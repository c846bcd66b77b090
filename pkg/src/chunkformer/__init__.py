from __future__ import annotations
from pint import UnitRegistry

ureg = UnitRegistry(on_redefinition="ignore")
Q_ = ureg.Quantity
from .chunkformer_base import *
from .numerics import *
from .embedding import *
from .attention import *
from .chunkformer import *
from .utility_functions import *
from .pipeline import *
from .training import *
from .bench import *
from .post_processing import *
from .presets import *
from .synthetic import *
