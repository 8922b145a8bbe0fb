__version__ = '0.1.0'

from . import serialization
from . import form
from . import seeding
from . import autodiff
from . import distributions
from . import objectives
from . import model
from . import bounds
from . import synth
from . import config
from . import metrics
from . import outcome
