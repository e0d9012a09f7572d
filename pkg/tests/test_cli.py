import json

import numpy as np
import pytest

from fastrate import cli
from fastrate import io as fio
from fastrate import mdp as M

TINY = """
[run]
seed = 3
[features]
n_position = 6
n_velocity = 4
[evaluation]
n_positions = 5
trajectories = 2
steps = 100
[sweep]
sizes = 300 600 1200
trials = 2
reference_n = 5000
rate_points = 3
[data]
n = 50
[tabular]
instances = 20
[diagnose]
instances = 1
trials = 5
n_actions = 101
disk_instances = 100
[online]
burn_in = 10
total = 80
"""


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.ini").write_text(TINY)
    out = root / "out"
    for cmd in ("build-reference", "sweep"):
        assert cli.main([cmd, "--config", str(root / "tiny.ini"), "--out", str(out)]) == 0
    return root, out


class TestPipeline:
    def test_manifest_contents(self, tiny):
        _, out = tiny
        man = json.loads((out / "sweep.manifest.json").read_text())
        assert man["command"] == "sweep"
        assert "PCG64" in man["prng"] and "ziggurat" in man["normal_method"]
        assert man["config"]["run"]["seed"] == "3"
        for name, digest in man["artifacts"].items():
            assert fio.sha256_file(out / name) == digest
        assert {"results.csv", "summary.csv", "rate_fit.csv"} <= set(man["artifacts"])

    def test_results_layout(self, tiny):
        _, out = tiny
        header, rows = fio.read_csv(out / "results.csv")
        assert header == ["n", "trial", "gap", "stderr"]
        assert [int(r[0]) for r in rows] == [300, 300, 600, 600, 1200, 1200]

    def test_replay_is_bit_identical(self, tiny):
        _, out = tiny
        again = out.parent / "replay"
        assert cli.main(["sweep", "--config", str(out / "sweep.manifest.json"), "--out", str(again)]) == 0
        for name in ("results.csv", "rate_fit.csv"):
            assert fio.sha256_file(again / name) == fio.sha256_file(out / name)

    def test_rate_fit_from_results(self, tiny):
        _, out = tiny
        dest = out.parent / "fit"
        assert cli.main(["rate-fit", "--config", str(tiny[0] / "tiny.ini"), "--results",
                         str(out / "results.csv"), "--out", str(dest)]) == 0
        assert (dest / "rate_fit.csv").read_bytes() == (out / "rate_fit.csv").read_bytes()

    def test_reference_seed_mismatch(self, tiny):
        root, out = tiny
        rc = cli.main(["sweep", "--config", str(root / "tiny.ini"), "--seed", "4", "--reference", str(out),
                       "--out", str(root / "mismatch")])
        assert rc == 2


class TestCommands:
    def test_generate_data(self, tmp_path):
        (tmp_path / "c.ini").write_text(TINY)
        assert cli.main(["generate-data", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path)]) == 0
        assert fio.read_mc_dataset(tmp_path / "dataset.csv").n == 50

    def test_tabular_verify(self, tmp_path):
        (tmp_path / "c.ini").write_text(TINY)
        assert cli.main(["tabular-verify", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path)]) == 0
        _, rows = fio.read_csv(tmp_path / "tabular_verify.csv")
        assert len(rows) == 20 and min(float(r[-1]) for r in rows) >= -1e-9

    def test_online(self, tmp_path):
        (tmp_path / "c.ini").write_text(TINY)
        assert cli.main(["online", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path)]) == 0
        header, rows = fio.read_csv(tmp_path / "trace.csv")
        assert header == ["t", "block", "J_hat", "regret_cum"] and len(rows) == 80

    def test_diagnose(self, tmp_path):
        (tmp_path / "c.ini").write_text(TINY)
        assert cli.main(["diagnose", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path)]) == 0
        _, rows = fio.read_csv(tmp_path / "diagnostics.csv")
        vals = {r[0]: float(r[3]) for r in rows}
        assert vals["disk_failures"] == 0.0


class TestExitCodes:
    def test_missing_reference_is_config_error(self, tmp_path, capsys):
        (tmp_path / "c.ini").write_text(TINY)
        assert cli.main(["sweep", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path)]) == 2
        assert "build-reference" in capsys.readouterr().err

    def test_bad_config(self, tmp_path):
        (tmp_path / "c.ini").write_text("[run]\nsede = 1\n")
        assert cli.main(["generate-data", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path)]) == 2
        assert cli.main(["generate-data", "--preset", "nope", "--out", str(tmp_path)]) == 2
        assert cli.main(["generate-data", "--threads", "0", "--out", str(tmp_path)]) == 2

    def test_config_and_preset_conflict(self, tmp_path):
        (tmp_path / "c.ini").write_text(TINY)
        assert cli.main(["online", "--config", str(tmp_path / "c.ini"), "--preset", "desk"]) == 2

    def test_dry_run_writes_nothing(self, tmp_path, capsys):
        out = tmp_path / "o"
        assert cli.main(["sweep", "--preset", "desk", "--out", str(out), "--dry-run"]) == 0
        text = capsys.readouterr().out
        assert "size_idx" in text and not out.exists()

    @pytest.mark.filterwarnings("ignore:dropped")
    def test_numeric_failure_exit_code(self, tmp_path):
        (tmp_path / "r.csv").write_text("n,trial,gap,stderr\n10,0,-1.0,0.1\n20,0,-1.0,0.1\n")
        (tmp_path / "c.ini").write_text(TINY)
        assert cli.main(["rate-fit", "--config", str(tmp_path / "c.ini"), "--results", str(tmp_path / "r.csv"),
                         "--out", str(tmp_path)]) == 3


def test_telescope_slack_is_nonnegative():
    rng = np.random.default_rng(0)
    for _ in range(50):
        mdp, f, cmp = cli.random_telescope_case(rng, 4, 3, 4)
        gap, rhs = cli.telescope_slack(mdp, f, cmp)
        assert gap <= rhs + 1e-9
        assert M.policy_value(mdp, cmp) - M.policy_value(mdp, M.greedy_policy(f)) == pytest.approx(gap)
