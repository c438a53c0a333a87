"""
Exception hierarchy shared by every layer. ``exit_code`` is what the daemon
and the CLI return when the error reaches the top level.
"""

from typing import Any, Optional

__all__ = [
    'AppendFailed',
    'ConfigError',
    'CursorRegression',
    'EvalError',
    'FunctionStartFailed',
    'IncompatibleNetwork',
    'InvalidIndex',
    'InvalidKeyword',
    'LookupFailed',
    'OffsetTrimmed',
    'ParseError',
    'PayloadTooLarge',
    'PostFailed',
    'ProfileTooWide',
    'ProtocolError',
    'QueueCorrupt',
    'QueueLocked',
    'ReplicationDegraded',
    'RpmeshError',
    'ScenarioError',
    'StoreFailed',
    'StreamBroken',
]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NETWORK = 2
EXIT_CORRUPT = 3


class RpmeshError(Exception):
    exit_code = EXIT_USAGE


class ConfigError(RpmeshError):
    pass


class InvalidKeyword(RpmeshError):
    pass


class InvalidIndex(RpmeshError):
    pass


class ProfileTooWide(RpmeshError):
    pass


class ProtocolError(RpmeshError):
    exit_code = EXIT_NETWORK


class IncompatibleNetwork(ProtocolError):
    pass


class LookupFailed(RpmeshError):
    exit_code = EXIT_NETWORK

    def __init__(self, message: str, partial: Optional[list] = None):
        super().__init__(message)
        self.partial = partial or []


class ReplicationDegraded(RpmeshError):
    exit_code = EXIT_NETWORK

    def __init__(self, message: str, acks: int = 0, required: int = 0):
        super().__init__(message)
        self.acks = acks
        self.required = required


class PostFailed(RpmeshError):
    exit_code = EXIT_NETWORK


class PayloadTooLarge(RpmeshError):
    def __init__(self, size: int, limit: int):
        super().__init__(f'payload of {size} bytes exceeds limit {limit}')
        self.size = size
        self.limit = limit


class FunctionStartFailed(RpmeshError):
    pass


class StreamBroken(RpmeshError):
    exit_code = EXIT_NETWORK

    def __init__(self, message: str, resume_from: int = 0):
        super().__init__(message)
        self.resume_from = resume_from


class AppendFailed(RpmeshError):
    exit_code = EXIT_CORRUPT


class OffsetTrimmed(RpmeshError):
    pass


class QueueCorrupt(RpmeshError):
    exit_code = EXIT_CORRUPT


class QueueLocked(RpmeshError):
    exit_code = EXIT_CORRUPT


class CursorRegression(RpmeshError):
    pass


class StoreFailed(RpmeshError):
    exit_code = EXIT_CORRUPT


class ParseError(RpmeshError):
    def __init__(self, message: str, position: int = 0):
        super().__init__(f'{message} at position {position}')
        self.position = position


class EvalError(RpmeshError):
    pass


class ScenarioError(RpmeshError):
    def __init__(self, message: str, step: Any = None):
        super().__init__(message)
        self.step = step
