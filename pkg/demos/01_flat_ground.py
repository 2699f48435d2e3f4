"""A first look at the simulator on flat ground.

Drops a ball from 5 m at 10 m/s, prints where it bounces, compares the third
bounce with the closed form, then inverts the closed form to find the launch
speed that lands the third bounce on 50 m.
"""

from bouncebench import SimParams, Simulator, SurfaceSpec, flat_ground_oracle

sim = Simulator.for_surface(SurfaceSpec.flat(), SimParams())
traj = sim(5.0, 10.0)

print("bounce   t (s)    x (m)")
for b in traj.bounces:
    print(f"{b.index:>6}  {b.t:6.3f}  {b.pos.x:7.3f}")

x3 = traj.bounces[2].pos.x
exact = flat_ground_oracle(5.0, 10.0)
print(f"\nsimulated third bounce {x3:.4f} m, closed form {exact:.4f} m, gap {abs(x3 - exact):.1e} m")

# x3 is linear in v at fixed h, so one division finds the speed for a 50 m target
v = 50.0 / flat_ground_oracle(5.0, 1.0)
print(f"from 5 m, a throw at {v:.3f} m/s lands its third bounce at {sim(5.0, v).bounces[2].pos.x:.3f} m")
