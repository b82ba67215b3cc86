"""
Annotation cost and what it buys
================================

The cost table for the three published frame counts, followed by a run of
the noisy benchmark at three supervision levels.
"""
from stil.bench import format_bench, load_config, run_bench
from stil.cli import DEFAULT_COST_FRAMES
from stil.supervision import format_cost_table

print(format_cost_table(DEFAULT_COST_FRAMES, ["UCF-101-24"], sep="\t"))

# labels only, a point every 10 frames, a box every 10 frames
rows = run_bench(load_config("noisy-small"))
print(format_bench(rows, sep="\t"))
