import io
import logging

from ttabench.log import configure_logging


class TestConfigureLogging(object):
    def test_renders_templates_from_extras(self):
        stream = io.StringIO()
        configure_logging("INFO", stream=stream)

        logging.getLogger("ttabench.bundle").log(
            logging.INFO, "Loaded bundle {dataset_name} in {load_time}", extra={"dataset_name": "pets", "load_time": 2}
        )

        assert "INFO ttabench.bundle Loaded bundle pets in 2" in stream.getvalue()

    def test_missing_placeholders_are_left_alone(self):
        stream = io.StringIO()
        configure_logging("DEBUG", stream=stream)

        logging.getLogger("ttabench.shift").log(logging.DEBUG, "Step {step} loss {loss}", extra={"step": 1})

        assert "Step 1 loss {loss}" in stream.getvalue()

    def test_level_filters_records(self):
        stream = io.StringIO()
        configure_logging("warning", stream=stream)

        logging.getLogger("ttabench.harness").log(logging.INFO, "quiet", extra={})

        assert stream.getvalue() == ""

    def test_reconfiguring_replaces_the_handler(self):
        configure_logging("INFO", stream=io.StringIO())
        root = configure_logging("INFO", stream=io.StringIO())

        assert len(root.handlers) == 1
        assert root.propagate is False
