from . import baird, cartpole, tiles
from .baird import baird_env
from .cartpole import CartPole, cartpole_features, cartpole_step
from .tiles import TileCoder, tile_code
