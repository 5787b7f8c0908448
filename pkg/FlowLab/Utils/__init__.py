from .integrators import RK4Stepper, STEPPERS, get_stepper

__all__ = ["RK4Stepper", "STEPPERS", "get_stepper"]
