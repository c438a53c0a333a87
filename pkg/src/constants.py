"""
Base constants shared by every module and echoed in every wire handshake.
"""

import hashlib

from .configurator import MainConfigurator

__all__ = [
    'ALPHABET',
    'API_NAME',
    'CONSTANTS_DIGEST',
    'DIGIT_BITS',
    'DIMENSIONS',
    'ID_BITS',
    'MAIN_API_ADDRESS',
    'NUMERIC_WIDTH',
    'ORDER',
    'ORIENTATION',
    'WIRE_MAGIC',
    'WIRE_VERSION',
    'config',
    'constants_digest',
]

config = MainConfigurator()

API_NAME = config.api_name
MAIN_API_ADDRESS = config.main_api_address

# Keyword alphabet in ASCII order; rank 0 is reserved for padding so a
# keyword never collides with its own extension.
ALPHABET = '-.0123456789:_abcdefghijklmnopqrstuvwxyz'
DIGIT_BITS = len(ALPHABET).bit_length()
NUMERIC_WIDTH = 8
ORIENTATION = 'skilling-v1'

DIMENSIONS = config.dimensions
ORDER = config.order

ID_BITS = 160

WIRE_MAGIC = b'RPLS'
WIRE_VERSION = 1


def constants_digest(dimensions: int, order: int) -> bytes:
    """8-byte digest over d|b|orientation|alphabet."""
    text = f'{dimensions}|{order}|{ORIENTATION}|{ALPHABET}'
    return hashlib.sha256(text.encode('ascii')).digest()[:8]


CONSTANTS_DIGEST = constants_digest(DIMENSIONS, ORDER)
