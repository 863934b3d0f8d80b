import difflib
from enum import Enum, unique

from .errors import UnknownMethodError


@unique
class Mode(Enum):
    episodic = "episodic"
    online = "online"


@unique
class MethodTag(Enum):

    # Baseline, valid in both modes
    zero_shot = "zero_shot"

    # Episodic methods
    tpt = "tpt"
    ctpt = "ctpt"
    rlcf = "rlcf"
    mta = "mta"
    zero = "zero"
    ttl = "ttl"
    tps = "tps"
    rtpt = "rtpt"

    # Online methods
    tda = "tda"
    dmn = "dmn"
    dmn_w = "dmn_w"
    onzeta = "onzeta"
    boostadapter = "boostadapter"
    dpe = "dpe"
    ecalp = "ecalp"
    dynaprompt = "dynaprompt"

    @property
    def modes(self):
        if self is MethodTag.zero_shot:
            return frozenset(Mode)
        if self in EPISODIC_TAGS:
            return frozenset({Mode.episodic})
        return frozenset({Mode.online})

    @property
    def has_confidence(self):
        return self is not MethodTag.zero

    def accepts_mode(self, mode):
        return Mode(mode) in self.modes

    @staticmethod
    def is_valid_method_tag(test_method_tag):

        for name, method_tag in MethodTag.__members__.items():
            if method_tag.value == test_method_tag:
                return True
        return False

    @staticmethod
    def suggest(test_method_tag, n=3):
        return difflib.get_close_matches(test_method_tag, [tag.value for tag in MethodTag], n=n, cutoff=0.5)


EPISODIC_TAGS = frozenset({
    MethodTag.tpt, MethodTag.ctpt, MethodTag.rlcf, MethodTag.mta,
    MethodTag.zero, MethodTag.ttl, MethodTag.tps, MethodTag.rtpt,
})
ONLINE_TAGS = frozenset({
    MethodTag.tda, MethodTag.dmn, MethodTag.dmn_w, MethodTag.onzeta,
    MethodTag.boostadapter, MethodTag.dpe, MethodTag.ecalp, MethodTag.dynaprompt,
})


def parse_method_tag(value):
    if isinstance(value, MethodTag):
        return value
    if not MethodTag.is_valid_method_tag(value):
        raise UnknownMethodError(
            value,
            suggestions=MethodTag.suggest(value),
            available=[tag.value for tag in MethodTag],
        )
    return MethodTag(value)
