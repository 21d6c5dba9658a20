from .checkpoints import *
from .config import *
from .constants import *
from .corpus import *
from .data import *
from .errors import *
from .evaluation import *
from .helpers import *
from .model import *
from .numerics import *
from .phonetics import *
from .synthetic import *
from .training import *

"""
Transpotter Kit: visual keyword spotting with a cross-modal transformer.
"""
__version__ = "0.1.0"
