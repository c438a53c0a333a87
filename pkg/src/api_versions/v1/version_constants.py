"""
Constants for corresponding API version.
"""

from ...constants import API_NAME, MAIN_API_ADDRESS

__all__ = [
    'API_VERSION',
    'API_NAME',
    'MAIN_API_ADDRESS',
    'DEFAULT_TIMEOUT_S',
    'MAX_PULL_LIMIT',
]

API_VERSION = 1

# upper bound on how long a request waits for the overlay to answer
DEFAULT_TIMEOUT_S = 30.0
MAX_PULL_LIMIT = 10_000
