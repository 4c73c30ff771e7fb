"""armplan: task-space trajectory planning and PPO-based joint control for a
6-DoF manipulator."""

__version__ = "0.1.0"
