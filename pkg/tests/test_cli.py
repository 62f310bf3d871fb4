import numpy as np
import pytest

from dncbmf import cli
from dncbmf.evaluation import HoldoutMask, ppd
from dncbmf.gibbs import SamplerConfig, run
from dncbmf.io import (ParseError, ReadCounts, betas_from_reads, ingest_matrix, read_chain,
                       read_manifest, read_mask, read_matrix, staged_output, top_variance,
                       write_mask, write_matrix)
from dncbmf.model import BetaMatrix, Hyperparams, embedding
from dncbmf.specfun import DomainError

QUICK = ["--burnin", "10", "--total", "20", "--thin", "5"]


def write_tsv(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture
def data_file(tmp_path):
    rng = np.random.default_rng(0)
    values = rng.beta(0.75, 0.75, (6, 8))
    path = tmp_path / "data.tsv"
    write_matrix(path, values, [f"s{i}" for i in range(6)], [f"g{j}" for j in range(8)])
    return path, values


class TestIngest:
    def test_small_matrix(self, tmp_path):
        p = write_tsv(tmp_path / "m.tsv", "id\tg1\tg2\ns1\t0.25\t0.5\ns2\t0.75\t0.125\n")
        bm = ingest_matrix(p)
        np.testing.assert_array_equal(bm.values, [[0.25, 0.5], [0.75, 0.125]])
        assert bm.row_ids == ["s1", "s2"] and bm.col_ids == ["g1", "g2"]
        assert bm.n_clamped == 0

    def test_boundary_clamped(self, tmp_path):
        p = write_tsv(tmp_path / "m.tsv", "id\tg1\tg2\ns1\t1.0\t0.5\n")
        bm = ingest_matrix(p)
        assert bm.values[0, 0] == 1 - 1e-6 and bm.n_clamped == 1

    def test_out_of_range_names_cell(self, tmp_path):
        p = write_tsv(tmp_path / "m.tsv", "id\tg1\tg2\ns1\t0.5\t0.5\ns2\t0.5\t1.5\n")
        with pytest.raises(ParseError, match=r"'s2'.*'g2'"):
            ingest_matrix(p)

    def test_unparseable_names_line_and_column(self, tmp_path):
        p = write_tsv(tmp_path / "m.tsv", "id\tg1\tg2\ns1\t0.5\tabc\n")
        with pytest.raises(ParseError, match=r"m.tsv:2: column 'g2'"):
            read_matrix(p)

    def test_ragged_row(self, tmp_path):
        p = write_tsv(tmp_path / "m.tsv", "id\tg1\tg2\ns1\t0.5\n")
        with pytest.raises(ParseError, match="expected 3 fields"):
            read_matrix(p)


class TestReads:
    def test_smoothed_ratio(self):
        bm = betas_from_reads(ReadCounts([[9]], [[1]], s0=0.1))
        assert bm.values[0, 0] == pytest.approx(9.1 / 10.2, rel=1e-15)

    def test_no_reads_is_half(self):
        assert betas_from_reads(ReadCounts([[0]], [[0]])).values[0, 0] == 0.5

    def test_rejects_bad_counts(self):
        with pytest.raises(DomainError):
            ReadCounts([[1.5]], [[1]])
        with pytest.raises(DomainError):
            ReadCounts([[1]], [[1, 2]])
        with pytest.raises(DomainError):
            ReadCounts([[1]], [[1]], s0=0.0)


class TestFormats:
    def test_matrix_round_trip(self, tmp_path):
        values = np.random.default_rng(1).uniform(size=(3, 5))
        write_matrix(tmp_path / "m.tsv", values, list("abc"), list("vwxyz"))
        back, rows, cols = read_matrix(tmp_path / "m.tsv")
        np.testing.assert_array_equal(back, values)
        assert rows == list("abc") and cols == list("vwxyz")

    def test_mask_round_trip(self, tmp_path):
        cells = np.array([[0, 3], [2, 1]])
        write_mask(tmp_path / "mask.tsv", cells)
        np.testing.assert_array_equal(read_mask(tmp_path / "mask.tsv"), cells)

    def test_top_variance_keeps_input_order(self):
        values = np.array([[0.1, 0.5, 0.2, 0.9], [0.9, 0.5, 0.3, 0.1]])
        bm = top_variance(BetaMatrix(values, ["a", "b"], list("wxyz")), 2)
        assert bm.col_ids == ["w", "z"]
        np.testing.assert_array_equal(bm.values, values[:, [0, 3]])

    def test_staged_output_is_atomic(self, tmp_path):
        target = tmp_path / "out"
        with pytest.raises(RuntimeError):
            with staged_output(target) as out:
                (out / "partial.tsv").write_text("x")
                raise RuntimeError("boom")
        assert not target.exists()
        assert list(tmp_path.iterdir()) == []
        with staged_output(target) as out:
            (out / "done.tsv").write_text("x")
        assert (target / "done.tsv").read_text() == "x"
        with pytest.raises(FileExistsError):
            with staged_output(target):
                pass


class TestFitEvaluateEmbed:
    def test_flow(self, tmp_path, data_file, capsys):
        data, values = data_file
        fit_dir = tmp_path / "fit"
        argv = ["fit", "--input", str(data), "--output", str(fit_dir), "--k", "3",
                "--seed", "4", "--mask-fraction", "0.1", *QUICK]
        assert cli.main(argv) == 0
        for name in ("data.tsv", "mask.tsv", "chain.tsv", "embedding.tsv", "trace.tsv",
                     "manifest.tsv"):
            assert (fit_dir / name).is_file()
        man = read_manifest(fit_dir / "manifest.tsv")
        assert man["mask_seed"] == "4" and man["n_held_out"] == "5"
        assert man["n_snapshots"] == "4" and len(man["input_sha256"]) == 64

        # the chain on disk is the chain the sampler produced
        chain, rows, cols = read_chain(fit_dir)
        mask = HoldoutMask(read_mask(fit_dir / "mask.tsv"))
        hyper = Hyperparams(K=3)
        ref = run(ingest_matrix(data), mask, hyper,
                  SamplerConfig(burnin=10, total=20, thin=5, seed=4))
        assert chain.sweeps == ref.sweeps == [15, 20, 25, 30]
        for a, b in zip(chain.states, ref.states):
            np.testing.assert_array_equal(a.theta1, b.theta1)
            np.testing.assert_array_equal(a.phi, b.phi)
        assert rows == [f"s{i}" for i in range(6)]

        ev_dir = tmp_path / "ev"
        capsys.readouterr()
        assert cli.main(["evaluate", "--chain", str(fit_dir), "--output", str(ev_dir),
                         "--per-cell"]) == 0
        report = read_manifest(ev_dir / "report.tsv")
        want = ppd(chain, ingest_matrix(data), mask)
        assert float(report["scaled_ppd"]) == want.scaled_ppd
        assert f"scaled_ppd\t{want.scaled_ppd!r}" in capsys.readouterr().out
        assert len((ev_dir / "per_cell.tsv").read_text().splitlines()) == 1 + len(mask)

        emb_dir = tmp_path / "emb"
        assert cli.main(["embed", "--chain", str(fit_dir), "--output", str(emb_dir)]) == 0
        rho, _, comps = read_matrix(emb_dir / "embedding.tsv")
        assert comps == ["k0", "k1", "k2"] and rho.shape == (6, 3)
        assert np.all((rho > 0) & (rho < 1))
        np.testing.assert_array_equal(rho, read_matrix(fit_dir / "embedding.tsv")[0])

    def test_single_snapshot_embedding(self, tmp_path, data_file):
        data, _ = data_file
        fit_dir = tmp_path / "fit"
        assert cli.main(["fit", "--input", str(data), "--output", str(fit_dir), "--k", "2",
                         "--burnin", "0", "--total", "5", "--thin", "5"]) == 0
        chain, _, _ = read_chain(fit_dir)
        assert len(chain) == 1
        assert cli.main(["embed", "--chain", str(fit_dir), "--output", str(tmp_path / "e")]) == 0
        rho = read_matrix(tmp_path / "e" / "embedding.tsv")[0]
        np.testing.assert_array_equal(rho, embedding(chain.states[0]).rho)

    def test_reads_input_and_top_variance(self, tmp_path):
        rng = np.random.default_rng(2)
        d = rng.integers(0, 30, (5, 7))
        u = rng.integers(0, 30, (5, 7))
        rows, cols = [f"s{i}" for i in range(5)], [f"g{j}" for j in range(7)]
        write_matrix(tmp_path / "d.tsv", d, rows, cols)
        write_matrix(tmp_path / "u.tsv", u, rows, cols)
        out = tmp_path / "fit"
        assert cli.main(["fit", "--reads-methylated", str(tmp_path / "d.tsv"),
                         "--reads-unmethylated", str(tmp_path / "u.tsv"), "--top-variance",
                         "4", "--k", "2", "--output", str(out), *QUICK]) == 0
        values, _, kept = read_matrix(out / "data.tsv")
        full = (0.1 + d) / (0.2 + d + u)
        assert len(kept) == 4
        np.testing.assert_array_equal(values, full[:, [cols.index(c) for c in kept]])

    def test_config_precedence(self, tmp_path, data_file):
        data, _ = data_file
        cfg = write_tsv(tmp_path / "run.cfg",
                        "# quick run\nburnin\t5\ntotal=10\nthin\t5\nk\t3\nparallel\tfalse\n")
        out = tmp_path / "fit"
        assert cli.main(["fit", "--config", cfg, "--input", str(data), "--k", "2",
                         "--output", str(out)]) == 0
        man = read_manifest(out / "manifest.tsv")
        assert (man["k"], man["burnin"], man["total"], man["thin"]) == ("2", "5", "10", "5")
        assert man["eps1"] == "0.75"

    def test_manifest_replays_run(self, tmp_path, data_file):
        data, _ = data_file
        first = tmp_path / "a"
        assert cli.main(["fit", "--input", str(data), "--output", str(first), "--k", "2",
                         "--seed", "9", *QUICK]) == 0
        second = tmp_path / "b"
        assert cli.main(["fit", "--config", str(first / "manifest.tsv"),
                         "--output", str(second)]) == 0
        assert (first / "chain.tsv").read_bytes() == (second / "chain.tsv").read_bytes()


class TestGenerate:
    def test_reproducible(self, tmp_path):
        for name in ("a", "b"):
            assert cli.main(["generate", "--output", str(tmp_path / name), "--n-rows", "10",
                             "--n-cols", "12", "--k", "3", "--seed", "5"]) == 0
        for f in ("data.tsv", "theta1.tsv", "theta2.tsv", "phi.tsv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_smaller_eps_puts_more_mass_at_the_ends(self, tmp_path):
        tails = []
        for eps in ("0.25", "0.75"):
            out = tmp_path / eps
            assert cli.main(["generate", "--output", str(out), "--eps1", eps, "--eps2", eps,
                             "--seed", "1"]) == 0
            values = read_matrix(out / "data.tsv")[0]
            tails.append(np.mean((values < 0.05) | (values > 0.95)))
        assert tails[0] > tails[1]

    def test_blocks_write_groups(self, tmp_path):
        out = tmp_path / "blocks"
        assert cli.main(["generate", "--blocks", "--output", str(out), "--n-rows", "8",
                         "--n-cols", "10"]) == 0
        lines = (out / "groups.tsv").read_text().splitlines()
        assert lines[0] == "id\tgroup" and len(lines) == 9
        assert read_matrix(out / "theta1.tsv")[0].shape == (8, 2)


class TestErrors:
    def test_existing_output_left_alone(self, tmp_path, data_file):
        data, _ = data_file
        out = tmp_path / "busy"
        out.mkdir()
        (out / "keep.txt").write_text("mine")
        assert cli.main(["fit", "--input", str(data), "--output", str(out), *QUICK]) == 1
        assert [p.name for p in out.iterdir()] == ["keep.txt"]

    def test_bad_input_exits_nonzero(self, tmp_path, capsys):
        bad = write_tsv(tmp_path / "bad.tsv", "id\tg1\ns1\t2.0\n")
        out = tmp_path / "fit"
        assert cli.main(["fit", "--input", bad, "--output", str(out), *QUICK]) == 1
        assert "outside [0, 1]" in capsys.readouterr().err
        assert not out.exists()

    def test_missing_file(self, tmp_path):
        assert cli.main(["fit", "--input", str(tmp_path / "nope.tsv"),
                         "--output", str(tmp_path / "o")]) == 1

    def test_evaluate_without_mask(self, tmp_path, data_file, capsys):
        data, _ = data_file
        fit_dir = tmp_path / "fit"
        assert cli.main(["fit", "--input", str(data), "--output", str(fit_dir), "--k", "2",
                         *QUICK]) == 0
        assert cli.main(["evaluate", "--chain", str(fit_dir),
                         "--output", str(tmp_path / "ev")]) == 1
        assert "no mask" in capsys.readouterr().err

    def test_bad_config_value(self, tmp_path, data_file):
        cfg = write_tsv(tmp_path / "c.cfg", "parallel\tmaybe\n")
        assert cli.main(["fit", "--config", cfg, "--input", str(data_file[0]),
                         "--output", str(tmp_path / "o")]) == 2

    def test_chain_file_mismatch(self, tmp_path, data_file):
        data, _ = data_file
        fit_dir = tmp_path / "fit"
        assert cli.main(["fit", "--input", str(data), "--output", str(fit_dir), "--k", "2",
                         *QUICK]) == 0
        text = (fit_dir / "manifest.tsv").read_text().replace("\nk\t2\n", "\nk\t3\n")
        (fit_dir / "manifest.tsv").write_text(text)
        with pytest.raises(ParseError, match="components"):
            read_chain(fit_dir)
