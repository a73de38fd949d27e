"""purcellctl: dynamic Purcell-factor control of erbium ions in a fiber microcavity.

Modules
-------
cavity        finesse, mode volume, bare Purcell factor, detuning factor
nanoparticle  Rayleigh scattering loss of a doped nanoparticle and its inverse
ensemble      per-ion Purcell factors inside a particle
dynamics      detuning schedules, population/rate integration, photon sampling
analysis      histogram fits, windowed lifetimes, natural-lifetime protocol
lock          side-of-fringe lock model and length-stability estimators
budget        detection probability, S/N and upgrade projections
config, cli   scenario files and the ``purcellctl`` command
"""

__version__ = "0.1.0"
