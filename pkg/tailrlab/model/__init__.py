from . import core
from . import checkpoint
from . import train
