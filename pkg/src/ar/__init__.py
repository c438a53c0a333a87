from .profile import (
    Profile,
    Term,
    TermKind,
    matches,
    normalize_keyword,
    terms_overlap,
)

__all__ = [
    'Profile',
    'Term',
    'TermKind',
    'matches',
    'normalize_keyword',
    'terms_overlap',
]
