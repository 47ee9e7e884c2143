"""Force-aware task-space planning for grasping and deforming a flexible branch."""

__version__ = "0.1.0"
