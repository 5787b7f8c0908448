import numpy as np


class RK4Stepper:
    """
    Classical fixed-step 4th-order Runge-Kutta stepper for autonomous fields.

    Attributes:
        name (str): Method tag used by IntegratorConfig.
        order (int): Convergence order.

    Methods:
        step(field, x, h):
            One step of x' = G(x). Works on a point (m,) or a batch (k, m).

        step_tangent(field, jac, x, V, h):
            One step of the coupled system x' = G(x), V' = DG(x) V. Also returns the
            RK4 increment of the integral of tr DG along the step.

        step_linear(J0, Jm, J1, Y, h):
            One step of the linear system Y' = J(t) Y given J at the start, midpoint
            and end of the step.
    """

    name = "rk4"
    order = 4

    def step(self, field, x, h):
        k1 = field(x)
        k2 = field(x + 0.5 * h * k1)
        k3 = field(x + 0.5 * h * k2)
        k4 = field(x + h * k3)
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def step_tangent(self, field, jac, x, V, h):
        J1 = jac(x)
        k1x = field(x)
        k1V = J1 @ V

        x2 = x + 0.5 * h * k1x
        J2 = jac(x2)
        k2x = field(x2)
        k2V = J2 @ (V + 0.5 * h * k1V)

        x3 = x + 0.5 * h * k2x
        J3 = jac(x3)
        k3x = field(x3)
        k3V = J3 @ (V + 0.5 * h * k2V)

        x4 = x + h * k3x
        J4 = jac(x4)
        k4x = field(x4)
        k4V = J4 @ (V + h * k3V)

        x_new = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        V_new = V + (h / 6.0) * (k1V + 2.0 * k2V + 2.0 * k3V + k4V)
        trace_inc = (h / 6.0) * (np.trace(J1) + 2.0 * np.trace(J2) + 2.0 * np.trace(J3) + np.trace(J4))
        return x_new, V_new, trace_inc

    def step_linear(self, J0, Jm, J1, Y, h):
        k1 = J0 @ Y
        k2 = Jm @ (Y + 0.5 * h * k1)
        k3 = Jm @ (Y + 0.5 * h * k2)
        k4 = J1 @ (Y + h * k3)
        return Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


STEPPERS = {RK4Stepper.name: RK4Stepper()}


def get_stepper(method: str) -> RK4Stepper:
    try:
        return STEPPERS[method]
    except KeyError:
        raise ValueError(f"unknown integration method {method!r}; known: {sorted(STEPPERS)}") from None
