"""Covy: desk-scale simulation of a social-distancing patrol robot.

Submodules: ``world`` (map, robot, pedestrians, lidar), ``perception``
(detector emulation, SORT tracking, breach detection), ``localization``
(ICP odometry, AMCL), ``drl`` (environment, DDPG, SAC), ``hybrid``
(odometry plus AMCL navigation) and ``harness`` / ``cli`` (experiments).
"""

__version__ = "0.1.0"
