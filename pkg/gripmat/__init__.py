"""gripmat - Material-property estimation from robot gripper compression traces."""

__version__ = "0.3.0"
__author__ = "Joshua Grant"
__email__ = "joshua@example.com"
