import json

import pytest

from pulseforge.cli import main, worker_count


@pytest.fixture
def ising3(tmp_path):
    target = {
        "n_qubits": 3,
        "unit": "MHz",
        "t_target": 1.0,
        "terms": [
            {"coeff": 1.0, "paulis": {"0": "Z", "1": "Z"}},
            {"coeff": 1.0, "paulis": {"1": "Z", "2": "Z"}},
            {"coeff": 1.0, "paulis": {"0": "X"}},
            {"coeff": 1.0, "paulis": {"1": "X"}},
            {"coeff": 1.0, "paulis": {"2": "X"}},
        ],
    }
    tpath = tmp_path / "ising3.json"
    tpath.write_text(json.dumps(target))
    apath = tmp_path / "rydberg3.json"
    apath.write_text(json.dumps({"preset": "rydberg", "n_sites": 3}))
    return str(tpath), str(apath)


class TestCompileCommand:
    def test_happy_path(self, ising3, tmp_path):
        tpath, apath = ising3
        out = tmp_path / "out.json"
        code = main(["compile", "--target", tpath, "--aais", apath, "-o", str(out)])
        assert code == 0
        data = json.loads(out.read_text())
        assert data["format_version"] == 1
        assert data["segments"][0]["t_machine_us"] == pytest.approx(0.8, abs=1e-9)
        assert "report" in data
        assert "stage_timings" not in data["report"]

    def test_malformed_target_exit_2(self, ising3, tmp_path):
        _, apath = ising3
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        code = main(["compile", "--target", str(bad), "--aais", apath])
        assert code == 2

    def test_missing_file_exit_2(self, ising3):
        _, apath = ising3
        assert main(["compile", "--target", "/nonexistent.json", "--aais", apath]) == 2

    def test_uncoverable_term_warns_but_succeeds(self, ising3, tmp_path):
        _, apath = ising3
        target = {
            "n_qubits": 2,
            "unit": "MHz",
            "t_target": 1.0,
            "terms": [{"coeff": 1.0, "paulis": {"0": "Y", "1": "Y"}}],
        }
        tpath = tmp_path / "yy.json"
        tpath.write_text(json.dumps(target))
        apath2 = tmp_path / "ryd2.json"
        apath2.write_text(json.dumps({"preset": "rydberg", "n_sites": 2}))
        out = tmp_path / "yy_out.json"
        code = main(["compile", "--target", str(tpath), "--aais", str(apath2), "-o", str(out)])
        assert code == 0
        rep = json.loads(out.read_text())["report"]
        assert rep["relative_error_pct"] > 10.0

    def test_infeasible_exit_1(self, tmp_path):
        target = {
            "n_qubits": 2,
            "unit": "MHz",
            "t_target": 1.0,
            "terms": [{"coeff": 500.0, "paulis": {"0": "Z", "1": "Z"}}],
        }
        tpath = tmp_path / "strong.json"
        tpath.write_text(json.dumps(target))
        apath = tmp_path / "ryd2.json"
        apath.write_text(json.dumps({"preset": "rydberg", "n_sites": 2}))
        assert main(["compile", "--target", str(tpath), "--aais", str(apath)]) == 1

    def test_byte_identical_outputs(self, ising3, tmp_path):
        tpath, apath = ising3
        out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
        main(["compile", "--target", tpath, "--aais", apath, "-o", str(out1), "--seed", "7"])
        main(["compile", "--target", tpath, "--aais", apath, "-o", str(out2), "--seed", "7"])
        assert out1.read_bytes() == out2.read_bytes()

    def test_emit_eqsys(self, ising3, tmp_path):
        tpath, apath = ising3
        out = tmp_path / "out.json"
        code = main(
            ["compile", "--target", tpath, "--aais", apath, "-o", str(out), "--emit", "eqsys"]
        )
        assert code == 0
        eq = json.loads((tmp_path / "out_eqsys.json").read_text())
        assert eq["matrix"]["shape"] == [12, 12]

    def test_schedule_round_trip(self, ising3, tmp_path):
        from pulseforge.solve import schedule_from_dict, schedule_to_dict

        tpath, apath = ising3
        out = tmp_path / "out.json"
        main(["compile", "--target", tpath, "--aais", apath, "-o", str(out)])
        data = json.loads(out.read_text())
        sched = schedule_from_dict(data)
        again = schedule_to_dict(sched)
        assert again["fixed"] == data["fixed"]
        assert again["segments"] == data["segments"]


class TestVerifyCommand:
    def test_fidelity_output(self, ising3, tmp_path, capsys):
        tpath, apath = ising3
        out = tmp_path / "out.json"
        main(["compile", "--target", tpath, "--aais", apath, "-o", str(out)])
        code = main(
            [
                "verify",
                "--schedule",
                str(out),
                "--target",
                tpath,
                "--aais",
                apath,
                "--observables",
            ]
        )
        assert code == 0
        result = json.loads(capsys.readouterr().out)
        assert result["fidelity"] >= 0.999
        assert "observables" in result


class TestBenchCommand:
    def test_csv_json_and_figures(self, tmp_path):
        out = tmp_path / "results.csv"
        code = main(
            [
                "bench",
                "--models",
                "ising_chain,heis_chain",
                "--sizes",
                "2,3",
                "--aais",
                "heisenberg",
                "-o",
                str(out),
            ]
        )
        assert code == 0
        assert out.exists()
        assert (tmp_path / "results.json").exists()
        assert (tmp_path / "results_compile_time.png").exists()
        assert (tmp_path / "results_relative_error.png").exists()
        lines = out.read_text().splitlines()
        assert len(lines) == 5


class TestInspectCommand:
    def test_table_and_figure(self, ising3, tmp_path, capsys):
        tpath, apath = ising3
        out = tmp_path / "out.json"
        main(["compile", "--target", tpath, "--aais", apath, "-o", str(out)])
        fig = tmp_path / "schedule.png"
        code = main(["inspect", "--schedule", str(out), "--figure", str(fig)])
        assert code == 0
        assert fig.exists()
        text = capsys.readouterr().out
        assert "compilation report" in text


class TestWorkerCount:
    def test_auto_when_unset(self, monkeypatch):
        monkeypatch.delenv("QTURBO_THREADS", raising=False)
        assert worker_count() >= 1

    def test_explicit(self, monkeypatch):
        monkeypatch.setenv("QTURBO_THREADS", "3")
        assert worker_count() == 3

    def test_zero_is_auto(self, monkeypatch):
        monkeypatch.setenv("QTURBO_THREADS", "0")
        assert worker_count() >= 1

    def test_invalid(self, monkeypatch):
        from pulseforge.errors import InvalidInputError

        monkeypatch.setenv("QTURBO_THREADS", "lots")
        with pytest.raises(InvalidInputError):
            worker_count()
