class ImproperlyConfigured(Exception):
    """
    Base class for any kind of configuration error: bad settings values or unknown method config keys
    """
    pass
