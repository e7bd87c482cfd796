"""Exception hierarchy shared by all modules."""


class LlmFeatError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(LlmFeatError):
    pass


class ParseError(LlmFeatError):
    def __init__(self, message, *, row=None, offset=None):
        super().__init__(message)
        self.row = row
        self.offset = offset


class EncodingError(LlmFeatError):
    def __init__(self, message, offending=()):
        super().__init__(message)
        self.offending = list(offending)


class TemplateError(LlmFeatError):
    pass


class ValidationError(LlmFeatError):
    pass


class ConfigError(LlmFeatError):
    pass


class TransportError(LlmFeatError):
    pass


class DegenerateTableError(LlmFeatError):
    pass


class AlignmentError(LlmFeatError):
    pass


class SettingsError(LlmFeatError):
    pass
