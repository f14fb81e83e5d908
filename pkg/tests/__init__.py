from .conftest import *