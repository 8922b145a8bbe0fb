from . import core
from . import oracle
from . import perturb
from . import exacc
from . import gaussian
from . import pipeline
