import numpy as np
import pytest

from factorblup.cli import main
from factorblup.errors import DataValidationError
from factorblup.io import (
    config_get,
    parse_config,
    read_dataset,
    read_kinship,
    write_dataset,
    write_kinship,
)
from factorblup.kinship import genomic_relationship
from factorblup.simulate import SimConfig, simulate_trial


def sim_small(seed=61):
    cfg = SimConfig(
        g=30, s=4, r=2, tau=3, p=60, seed=seed,
        factor_blocks=((0, 1), (2, 3)),
        strengths=np.tile([0.8, 0.7], (3, 1)),
        rho=(0.5, 0.0), h2_focal=0.5,
    )
    return simulate_trial(cfg)[0]


class TestDatasetRoundTrip:
    def test_write_read_identity(self, tmp_path):
        dataset = sim_small()
        write_dataset(dataset, tmp_path)
        back = read_dataset(str(tmp_path))
        assert back.design.genotype_ids == dataset.design.genotype_ids
        assert back.design.timepoints == dataset.design.timepoints
        assert back.design.stage_labels == dataset.design.stage_labels
        assert np.array_equal(back.design.plot_genotype, dataset.design.plot_genotype)
        assert back.trait_labels == dataset.trait_labels
        assert np.array_equal(back.secondary, dataset.secondary)
        assert np.array_equal(back.focal, dataset.focal)
        assert np.array_equal(back.markers, dataset.markers)

    def test_missing_cells_rejected(self, tmp_path):
        dataset = sim_small()
        write_dataset(dataset, tmp_path)
        pheno = tmp_path / "phenotype.csv"
        lines = pheno.read_text().splitlines()
        pheno.write_text("\n".join(lines[:-1]) + "\n")  # drop one cell
        with pytest.raises(DataValidationError):
            read_dataset(str(tmp_path))

    def test_kinship_round_trip(self, tmp_path):
        dataset = sim_small()
        k = genomic_relationship(dataset.markers, labels=dataset.design.genotype_ids)
        path = tmp_path / "kinship.csv"
        write_kinship(k, str(path))
        back = read_kinship(str(path))
        assert back.labels == k.labels
        assert np.allclose(back.values, k.values, atol=1e-12)


class TestConfig:
    def test_parse(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("# comment\n g = 20 \nrho = 0.5,0.2\nflag = true\n")
        cfg = parse_config(str(p))
        assert cfg == {"g": "20", "rho": "0.5,0.2", "flag": "true"}
        assert config_get(cfg, "g", int) == 20
        assert config_get(cfg, "flag", bool) is True
        assert config_get(cfg, "absent", float, 1.5) == 1.5

    def test_bad_line(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("just words\n")
        with pytest.raises(DataValidationError):
            parse_config(str(p))

    def test_missing_required(self, tmp_path):
        with pytest.raises(DataValidationError):
            config_get({}, "g", int)


class TestCli:
    def test_simulate_cv_report_flow(self, tmp_path):
        sim_cfg = tmp_path / "sim.txt"
        sim_cfg.write_text(
            "g = 40\ns = 4\nr = 2\ntau = 3\np = 80\nseed = 3\n"
            "h2_focal = 0.5\nrho = 0.6,0.0\nfamilies = 8\n"
        )
        data_dir = tmp_path / "data"
        assert main(["simulate", "--config", str(sim_cfg), "--out", str(data_dir)]) == 0
        assert (data_dir / "phenotype.csv").exists()

        plan_cfg = tmp_path / "plan.txt"
        plan_cfg.write_text(
            "replicates = 1\nmodels = uni,pertime\nstages = all\nartifacts = true\n"
        )
        out_dir = tmp_path / "cv_out"
        assert main(["cv", "--data", str(data_dir), "--plan", str(plan_cfg), "--out", str(out_dir)]) == 0
        for name in (
            "pa_boxplot.csv", "pa_summary.csv", "selection_incidence.csv",
            "loadings_series.csv", "factor_correlations.csv", "trajectories.csv",
            "report.json",
        ):
            assert (out_dir / name).exists(), name

        rep_dir = tmp_path / "rep_out"
        assert main(["report", "--in", str(out_dir), "--out", str(rep_dir)]) == 0
        assert (rep_dir / "pa_boxplot.csv").read_text() == (out_dir / "pa_boxplot.csv").read_text()

    def test_fit_command(self, tmp_path):
        dataset = sim_small()
        data_dir = tmp_path / "data"
        write_dataset(dataset, data_dir)
        out_dir = tmp_path / "fit_out"
        assert main(["fit", "--data", str(data_dir), "--out", str(out_dir)]) == 0
        assert (out_dir / "loadings_series.csv").exists()
        assert (out_dir / "heritability.csv").exists()
        assert (out_dir / "trajectories.csv").exists()

    def test_usage_error_exit_code(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["cv", "--out", "x"])  # missing --data
        assert exc.value.code == 1

    def test_validation_error_exit_code(self, tmp_path):
        assert main(["cv", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2

    def test_simulate_needs_config(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path / "x")]) == 2
