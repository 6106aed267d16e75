import pytest

from conftest import tiny_config, tiny_synth
from hiddenemo.ablation import AblationBudget, AblationData, AblationGrid, AblationRow, AblationTable, run_ablation
from hiddenemo.datamodel import ValidationError


def test_grid_validation():
    with pytest.raises(ValidationError):
        AblationGrid(kinds=())
    with pytest.raises(ValidationError):
        AblationGrid(kinds=("cnn",))
    with pytest.raises(ValidationError):
        AblationGrid(strategies=("magic",))


def test_grid_cells_force_offsets_for_combined_strategy():
    g = AblationGrid(("mlp", "gcn"), ("on", "off"), ("direct", "weak_sup+offsets"))
    cells = g.cells()
    assert len(cells) == 4 + 2
    assert all(off == "on" for _, off, s in cells if s == "weak_sup+offsets")


def test_table_formatting():
    t = AblationTable([AblationRow("mlp", "on", "direct", {0: 0.5, 1: 1.0})], (0, 1, 2), complete=False)
    assert t.row("mlp", "on", "direct").mean == 0.75
    assert "INCOMPLETE" in t.format()
    assert t.to_csv().splitlines()[1].startswith("mlp,on,direct,0.750000,0.250000,2,")


def _tiny_data():
    return AblationData(synth=tiny_synth(sample_count=10), gold_count=4, pool_count=2, val_count=4)


def test_tiny_run_fills_every_cell():
    grid = AblationGrid(("mlp",), ("on", "off"), ("keypoint_only", "weak_sup"))
    budget = AblationBudget(seeds=(0,), epochs=1, batch_size=4, views_per_epoch=1)
    table = run_ablation(grid, _tiny_data(), budget, tiny_config())
    assert table.complete and len(table.rows) == 4
    assert all(0.0 <= r.accuracies[0] <= 1.0 for r in table.rows)


def test_budget_exhaustion_marks_incomplete():
    grid = AblationGrid(("mlp",), ("on",), ("keypoint_only",))
    budget = AblationBudget(seeds=(0, 1), epochs=1, batch_size=4, max_seconds=0.0)
    table = run_ablation(grid, _tiny_data(), budget, tiny_config())
    assert not table.complete
    assert table.rows[0].accuracies == {}


def test_data_validation():
    with pytest.raises(ValidationError):
        AblationData(synth=None)
    with pytest.raises(ValidationError):
        AblationData(noise_rate=1.5)
