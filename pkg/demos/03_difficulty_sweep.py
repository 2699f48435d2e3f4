"""How rough ground erodes a feedback-driven agent.

Runs the bisection agent through the ten blended surfaces. Its bracketing
assumes the landing point grows with speed, which holds on flat ground and
breaks down as the surface gets rougher. The agent is a pure function of the
transcript and every trial sees the same 50 m prompt, so on any one surface
it either solves all trials or none. Coarse error maps of the easiest and
hardest surfaces go to ./demo_maps.
"""

from pathlib import Path

from bouncebench import AgentConfig, AgentKind, ExperimentSpec, HeatmapSpec, Mode, SurfaceSpec, heatmap, run_experiment

agent = AgentConfig(AgentKind.BISECTION, seed=0)
print("exp    success  mean error (m)")
for k in range(1, 11):
    res = run_experiment(ExperimentSpec(f"C-{k}", Mode.SIMLM, trials=10, seed=k), agent)
    eps = res.episodes
    rate = sum(e.success for e in eps) / len(eps)
    mean = sum(e.final_error for e in eps) / len(eps)
    print(f"C-{k:<3}  {rate:7.0%}  {mean:14.2f}")

out = Path("demo_maps")
out.mkdir(exist_ok=True)
for d in (0.1, 1.0):
    r = heatmap(HeatmapSpec(SurfaceSpec.blend(d), grid=(60, 40)))
    r.write(out / f"blend_{d}.csv", out / f"blend_{d}.pgm")
    print(f"d={d}: {(r.errors <= 1).sum()} of {r.errors.size} cells within 1 m")
