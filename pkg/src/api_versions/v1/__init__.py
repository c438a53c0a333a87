from .gateway import gateway
from .routes import main_router
from .version_constants import API_VERSION

__all__ = ['API_VERSION', 'gateway', 'main_router']
