"""Why simulator feedback matters, shown with scripted agents.

The bisection agent only improves because it reads the signed miss from each
feedback round. The random agent ignores everything. Both face the same 50 m
target on flat ground, 100 seeded trials each.
"""

from bouncebench import AgentConfig, AgentKind, ExperimentSpec, Mode, run_experiment
from bouncebench.pipeline import format_transcript
from bouncebench.stats import format_table, report_rows, welch_t_test

seed = 1
smart = run_experiment(ExperimentSpec("A", Mode.SIMLM, trials=100, seed=seed), AgentConfig(AgentKind.BISECTION, seed=0))
blind = run_experiment(ExperimentSpec("A", Mode.BASELINE, trials=100, seed=seed), AgentConfig(AgentKind.RANDOM, seed=0))

print(format_table(report_rows(smart.episodes + blind.episodes)))

test = welch_t_test([e.final_error for e in smart.episodes], [e.final_error for e in blind.episodes])
print(f"\nWelch t = {test.t:.2f}, df = {test.df:.1f}, p = {test.p:.2e}")

print("\nOne feedback episode in full:\n")
print(format_transcript(smart.episodes[0]))
