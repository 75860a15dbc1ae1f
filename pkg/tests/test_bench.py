import pytest

from depthcod import bench
from depthcod.errors import BadConfig

from conftest import tiny_config


class TestParamAudit:
    def test_base_groups(self):
        audit = bench.param_audit("base")
        assert set(audit) == {"rgb_encoder", "rgb_decoder"}

    def test_ade_adds_depth_branch_only(self):
        audit = bench.param_audit("ade")
        assert set(audit) == {"rgb_encoder", "rgb_decoder",
                              "depth_encoder", "depth_decoder"}

    def test_a_d_adds_fusion(self):
        audit = bench.param_audit("a_d")
        assert set(audit) == {"rgb_encoder", "rgb_decoder", "depth_encoder",
                              "depth_decoder", "fusion"}

    def test_full_adds_latent_and_discriminator(self):
        audit = bench.param_audit("full")
        assert set(audit) == {"rgb_encoder", "rgb_decoder", "depth_encoder",
                              "depth_decoder", "fusion", "latent", "discriminator"}

    def test_group_chain_is_nested_with_stable_counts(self):
        chain = [bench.param_audit(v) for v in ("base", "ade", "a_d", "full")]
        for smaller, larger in zip(chain, chain[1:]):
            assert set(smaller) < set(larger)
            for group, count in smaller.items():
                assert larger[group] == count

    def test_total_params_strictly_increasing(self):
        totals = [bench.total_params(v) for v in ("base", "ade", "a_d", "full")]
        assert totals == sorted(totals) and len(set(totals)) == 4


class TestGridCells:
    def test_ablation_cells(self):
        cells = bench.make_grid("ablation")
        assert [c.variant for c in cells] == ["base", "ade", "a_d", "full"]
        assert all(c.size == 64 and c.backbone == "tiny" for c in cells)

    def test_fusion_cells(self):
        cells = bench.make_grid("fusion")
        assert [c.variant for c in cells] == ["early", "cross", "late"]

    def test_unknown_grid(self):
        with pytest.raises(BadConfig):
            bench.make_grid("everything")


def _grid_base(toy_root, tmp_path, steps=4):
    return tiny_config(
        toy_root, tmp_path, epochs=steps, max_steps=steps,
        checkpoint_every=steps, lr_gen=1e-3, lr_dis=1e-3)


class TestRunGrid:
    def test_ablation_grid_completes(self, toy_root, tmp_path):
        base = _grid_base(toy_root, tmp_path)
        rows, csv_path = bench.run_grid(bench.make_grid("ablation"), base,
                                        tmp_path / "grid")
        assert len(rows) == 4
        text = csv_path.read_text().splitlines()
        assert text[0] == bench.GRID_CSV_HEADER
        assert len(text) == 5
        for row in rows:
            assert row.status == "OK"
            assert 0.0 <= row.f_beta <= 1.0
            assert 0.0 <= row.mae <= 1.0
        params = [row.params for row in rows]
        assert params == sorted(params) and len(set(params)) == 4

    def test_fusion_grid_completes(self, toy_root, tmp_path):
        base = _grid_base(toy_root, tmp_path)
        rows, _ = bench.run_grid(bench.make_grid("fusion"), base, tmp_path / "grid")
        assert [r.cell.variant for r in rows] == ["early", "cross", "late"]
        for row in rows:
            assert row.status == "OK"
            assert 0.0 <= row.f_beta <= 1.0

    def test_failed_cell_does_not_stop_grid(self, toy_root, tmp_path):
        base = _grid_base(toy_root, tmp_path, steps=2)
        cells = [bench.GridCell(variant="warpdrive"), bench.GridCell(variant="base")]
        rows, csv_path = bench.run_grid(cells, base, tmp_path / "grid")
        assert rows[0].status == "FAILED"
        assert rows[1].status == "OK"
        lines = csv_path.read_text().splitlines()
        assert lines[1].startswith("warpdrive,") and lines[1].endswith("FAILED")
