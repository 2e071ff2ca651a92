class ConfigError(ValueError):
    """Invalid or incomplete configuration."""


class ProtocolViolation(RuntimeError):
    """Feedback inconsistent with the agent's own decision."""
