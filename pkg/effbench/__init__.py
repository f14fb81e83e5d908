from . import app, app_config, consts, error_handling
from .app import create_app
