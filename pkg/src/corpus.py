"""Built-in problem files, addressable by name from the CLI (``--builtin NAME``)."""

from __future__ import annotations

# Planar motion at constant speed v, heading z; one corner where the heading turns.
_APPB1_SYSTEM = """\
[system]
name = {name}
n = 2
r = 1
states = ["x", "y"]
controls = ["z"]
psi = ["v*cos(z)", "v*sin(z)"]
lagrangian = "0"

[params]
v = 1

[extrinsic]
free_lagrangian = "0"
constraints = ["x_dot^2 + y_dot^2 - v^2"]
"""

APPB1 = _APPB1_SYSTEM.format(name="appb1") + """
[curve]
t0 = -1
t1 = 1
q0 = [0, -1]
corners = [0]
controls = [["pi/2"], ["0"]]
"""

APPB1_ARC1 = _APPB1_SYSTEM.format(name="appb1-arc1") + """
[curve]
t0 = -1
t1 = 0
q0 = [0, -1]
controls = [["pi/2"]]
"""

APPB1_ARC2 = _APPB1_SYSTEM.format(name="appb1-arc2") + """
[curve]
t0 = 0
t1 = 1
q0 = [0, 0]
controls = [["0"]]
"""

# x' depends on z only through (z^2 - a^2 t^2)^2, stationary along z = a t and z = 0.
_APPB2_SYSTEM = """\
[system]
name = {name}
n = 2
r = 1
states = ["x", "y"]
controls = ["z"]
psi = ["v^-3*(z^2 - a^2*t^2)^2", "z"]
lagrangian = "0"

[params]
a = 1
v = 1
tstar = 1
"""

APPB2 = _APPB2_SYSTEM.format(name="appb2") + """
[curve]
t0 = 0.25
t1 = 2
q0 = [0, -0.46875]
corners = [1]
controls = [["a*t"], ["0"]]
"""

APPB2_ARC1 = _APPB2_SYSTEM.format(name="appb2-arc1") + """
[curve]
t0 = 0.25
t1 = 1
q0 = [0, -0.46875]
controls = [["a*t"]]
"""

APPB2_ARC2 = _APPB2_SYSTEM.format(name="appb2-arc2") + """
[curve]
t0 = 1
t1 = 2
q0 = [0, 0]
controls = [["0"]]
"""

# The third state couples to z1 through a flat function that vanishes for t >= 0.
_APPB3_SYSTEM = """\
[system]
name = {name}
n = 3
r = 2
states = ["x", "y", "w"]
controls = ["z1", "z2"]
psi = ["z1", "z2", "flatstep(t)*z1"]
lagrangian = "0"

[extrinsic]
free_lagrangian = "0"
constraints = ["w_dot - flatstep(t)*x_dot"]
"""

APPB3 = _APPB3_SYSTEM.format(name="appb3") + """
[curve]
t0 = -1
t1 = 1
q0 = [0, 0, 0]
controls = [["1", "0"]]
"""

APPB3_RIGHT = _APPB3_SYSTEM.format(name="appb3-right") + """
[curve]
t0 = 0
t1 = 1
q0 = [1, 0, 0]
controls = [["1", "0"]]
"""

HOLONOMIC = """\
[system]
name = holonomic
n = 2
r = 2
states = ["x", "y"]
controls = ["u", "w"]
psi = ["u", "w"]
lagrangian = "(u^2 + w^2)/2"

[curve]
t0 = 0
t1 = 1
q0 = [0, 0]
controls = [["1", "2"]]

[solve]
t0 = 0
t1 = 1
q_start = [0, 0]
q_end = [1, 2]
p0 = [0.3, 0.3]
z_seeds = [[0, 0]]
"""

FREE_PARTICLE = """\
[system]
name = free-particle
n = 1
r = 1
states = ["x"]
controls = ["z"]
psi = ["z"]
lagrangian = "z^2/2"

[curve]
t0 = 0
t1 = 1
q0 = [0]
controls = [["1"]]

[solve]
t0 = 0
t1 = 1
q_start = [0]
q_end = [1]
p0 = [0.5]
z_seeds = [[0.5]]
gauge = "x + t"
"""

# Broken extremal: z = +1 then z = -1, both minimizing (z^2 - 1)^2 with p = 0.
DOUBLE_WELL = """\
[system]
name = double-well
n = 1
r = 1
states = ["x"]
controls = ["z"]
psi = ["z"]
lagrangian = "(z^2 - 1)^2"

[curve]
t0 = 0
t1 = 1
q0 = [0]
corners = [0.5]
controls = [["1"], ["-1"]]

[solve]
t0 = 0
t1 = 1
q_start = [0]
q_end = [0]
corners = 1
corner_times = [0.4]
p0 = [0]
z_seeds = [[1], [-1]]
"""

_UNIT_SPEED_SYSTEM = """\
[system]
name = {name}
n = 2
r = 1
states = ["x", "y"]
controls = ["z"]
psi = ["v*cos(z)", "v*sin(z)"]
lagrangian = "1"

[params]
v = 1

[extrinsic]
free_lagrangian = "1"
constraints = ["x_dot^2 + y_dot^2 - v^2"]

[curve]
t0 = 0
t1 = 1
q0 = [0, 0]
controls = [["0"]]
"""

UNIT_SPEED = _UNIT_SPEED_SYSTEM.format(name="unit-speed") + """
[solve]
t0 = 0
t1 = 1
q_start = [0, 0]
q_end = [1, 0]
p0 = [1, 0.2]
z_seeds = [[0.1]]
"""

# |q_end - q_start| exceeds v (t1 - t0): outside the reachable set.
UNIT_SPEED_UNREACHABLE = _UNIT_SPEED_SYSTEM.format(name="unit-speed-unreachable") + """
[solve]
t0 = 0
t1 = 1
q_start = [0, 0]
q_end = [2, 0]
p0 = [1, 0.2]
z_seeds = [[0.1]]

[numerics]
steps_per_unit = 100
"""

BROCKETT = """\
[system]
name = brockett
n = 3
r = 2
states = ["x", "y", "s"]
controls = ["u", "w"]
psi = ["u", "w", "x*w - y*u"]
lagrangian = "(u^2 + w^2)/2"

[curve]
t0 = 0
t1 = 1
q0 = [0, 0, 0]
controls = [["1", "0"]]

[solve]
t0 = 0
t1 = 1
q_start = [0, 0, 0]
q_end = [1, 0, 0]
p0 = [0.5, 0.1, 0.1]
z_seeds = [[1, 0]]
"""

BUILTINS: dict[str, str] = {
    "appb1": APPB1,
    "appb1-arc1": APPB1_ARC1,
    "appb1-arc2": APPB1_ARC2,
    "appb2": APPB2,
    "appb2-arc1": APPB2_ARC1,
    "appb2-arc2": APPB2_ARC2,
    "appb3": APPB3,
    "appb3-right": APPB3_RIGHT,
    "holonomic": HOLONOMIC,
    "free-particle": FREE_PARTICLE,
    "double-well": DOUBLE_WELL,
    "unit-speed": UNIT_SPEED,
    "unit-speed-unreachable": UNIT_SPEED_UNREACHABLE,
    "brockett": BROCKETT,
}
