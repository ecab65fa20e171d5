import math
import os
import re
import sys

import numpy as np
import pytest

from adrefocus import cli
from adrefocus.config import BUNDLED, ConfigError, load_config, parse_config
from adrefocus.io import read_csv, read_json, read_trace, write_csv, write_json, write_trace
from adrefocus.model import TransmissionTrace
from adrefocus.units import TWO_PI

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

TABLE1 = """
[pulse]
rabi = "284.4 kHz"
chirp = "40 kHz/us"
duration = "100 us"
[distribution]
fwhm = "0.5 MHz"
"""


def run(args, capsys):
    code = cli.main([str(a) for a in args])
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def raw(text):
    return tomllib.loads(text)


def files_bytes(folder):
    return {p.name: p.read_bytes() for p in sorted(folder.iterdir())}


class TestConfig:
    @pytest.mark.parametrize("name", ["fig2", "fig3", "fig4", "fig5", "fig7", "table1"])
    def test_bundled_configs_load(self, name):
        cfg = load_config(BUNDLED / f"{name}.toml")
        assert cfg.label == name
        cfg.sequence()

    def test_units_are_converted(self):
        cfg = load_config(BUNDLED / "table1.toml")
        assert cfg.pulse.rabi == pytest.approx(TWO_PI * 284.4e3)
        assert cfg.pulse.chirp == pytest.approx(TWO_PI * 40e9)
        assert cfg.pulse.duration == pytest.approx(1e-4)
        assert cfg.fwhm == pytest.approx(TWO_PI * 0.5e6)

    def test_lifetime_and_gamma_are_equivalent(self):
        a = parse_config(raw(TABLE1 + '[relaxation]\nlifetime = "0.25 ms"\n'))
        b = parse_config(raw(TABLE1 + '[relaxation]\ngamma = "4 1/ms"\n'))
        assert a.gamma == pytest.approx(4000.0)
        assert b.gamma == pytest.approx(4000.0)

    def test_bare_number_rejected(self):
        with pytest.raises(ConfigError, match="rabi"):
            parse_config(raw(TABLE1.replace('"284.4 kHz"', "284.4")))

    def test_wrong_unit_kind_rejected(self):
        with pytest.raises(ConfigError, match="duration"):
            parse_config(raw(TABLE1.replace('"100 us"', '"100 kHz"')))

    def test_missing_key(self):
        with pytest.raises(ConfigError, match="missing key 'chirp'"):
            parse_config(raw(TABLE1.replace('chirp = "40 kHz/us"\n', "")))

    def test_missing_table(self):
        with pytest.raises(ConfigError, match="pulse"):
            parse_config({"distribution": {"fwhm": "1 MHz"}})

    def test_gamma_and_lifetime_conflict(self):
        text = TABLE1 + '[relaxation]\ngamma = "3 1/ms"\nlifetime = "0.33 ms"\n'
        with pytest.raises(ConfigError, match="not both"):
            parse_config(raw(text))

    def test_unknown_shape(self):
        with pytest.raises(ConfigError, match="shape"):
            parse_config(raw(TABLE1 + 'shape = "boxcar"\n'))

    def test_malformed_file(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("[pulse\nrabi = ")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "nope.toml")


class TestIo:
    def test_csv_round_trip_is_lossless(self, tmp_path):
        rng = np.random.default_rng(0)
        data = rng.normal(size=(50, 3)) * np.array([1e-300, 1.0, 1e300])
        data[0] = [0.1 + 0.2, -0.0, 5e-324]
        p = write_csv(tmp_path / "a.csv", ("a", "b", "c"), data)
        cols = read_csv(p)
        assert list(cols) == ["a", "b", "c"]
        for k, name in enumerate("abc"):
            assert cols[name].tobytes() == data[:, k].tobytes()

    def test_trace_round_trip(self, tmp_path):
        t = np.linspace(0, 1e-4, 31)
        tr = TransmissionTrace(t, np.exp(-t * 1e3), np.sin(t * 1e5))
        back = read_trace(write_trace(tmp_path / "t.csv", tr))
        for name in ("times", "intensity", "alpha"):
            assert np.array_equal(getattr(back, name), getattr(tr, name))

    def test_trace_without_alpha(self, tmp_path):
        p = write_csv(tmp_path / "t.csv", ("time_s", "intensity"), [[0.0, 1.0], [1.0, 0.5]])
        tr = read_trace(p)
        assert np.all(np.isnan(tr.alpha))
        with pytest.raises(ValueError):
            read_trace(write_csv(tmp_path / "u.csv", ("x",), [[1.0]]))

    def test_json_sorted_and_clean(self, tmp_path):
        p = write_json(tmp_path / "s.json", {"b": np.float64(1.5), "a": np.arange(3),
                                             "c": math.nan, "d": np.bool_(True)})
        text = p.read_text()
        assert text.index('"a"') < text.index('"b"')
        assert read_json(p) == {"a": [0, 1, 2], "b": 1.5, "c": None, "d": True}


class TestInspect:
    def test_table1(self, capsys):
        code, out, _ = run(["inspect", "--config", "table1"], capsys)
        assert code == cli.EXIT_OK
        q = [float(x) for x in re.findall(r"Q = ([0-9.]+)", out)]
        flip = [float(x) for x in re.findall(r"flip time = ([0-9.]+) us", out)]
        assert q and all(abs(v - 12.7) <= 0.1 for v in q)
        assert flip and all(abs(v - 7.1) <= 0.1 for v in flip)
        assert "coverage" in out

    def test_zero_sweep_warns_but_succeeds(self, tmp_path, capsys):
        p = tmp_path / "r0.toml"
        p.write_text(TABLE1.replace('"40 kHz/us"', '"0 kHz/us"'))
        code, out, _ = run(["inspect", "--config", p], capsys)
        assert code == cli.EXIT_OK
        assert re.search(r"warning: .*coverage", out)

    def test_malformed_file_exits_nonzero(self, tmp_path, capsys):
        p = tmp_path / "bad.toml"
        p.write_text("this is not = = toml")
        code, _, err = run(["inspect", "--config", p], capsys)
        assert code == cli.EXIT_CONFIG
        assert "invalid config" in err


class TestRun:
    def test_refocusing_fig5(self, tmp_path, capsys):
        code, out, _ = run(["run", "--config", "fig5", "--scenario", "refocusing", "--out", tmp_path],
                           capsys)
        assert code == cli.EXIT_OK
        s = read_json(tmp_path / "refocusing_fig5.json")
        m = s["markers"]
        assert m["I1"] < m["I2"] < m["I0"]
        tr = read_trace(tmp_path / "refocusing_fig5.csv")
        # marker instants are merged into the uniform grid
        assert tr.times.size >= 1201 and np.all(np.diff(tr.times) > 0)
        assert str(tmp_path / "refocusing_fig5.csv") in out

    def test_spheres_fig2(self, tmp_path, capsys):
        code, _, _ = run(["run", "--config", "fig2", "--scenario", "spheres", "--seed", 1,
                          "--out", tmp_path], capsys)
        assert code == cli.EXIT_OK
        snaps = sorted(tmp_path.glob("spheres_fig2_s*.csv"))
        assert len(snaps) == 5
        for p in snaps:
            cols = read_csv(p)
            assert list(cols) == ["delta_hz", "mx", "my", "mz"]
            assert cols["mx"].size == 2000
        s = read_json(tmp_path / "spheres_fig2.json")
        assert s["n_spins"] == 2000
        assert s["snapshots"][-1]["mean"][0] == pytest.approx(1.0, abs=1e-9)

    def test_snapshot_times_flag(self, tmp_path, capsys):
        code, _, _ = run(["run", "--config", "fig2", "--scenario", "spheres", "--out", tmp_path,
                          "--snapshot-times", "0T,0.5T"], capsys)
        assert code == cli.EXIT_OK
        s = read_json(tmp_path / "spheres_fig2.json")
        times = [x["time_s"] for x in s["snapshots"]]
        assert times[1] - times[0] == pytest.approx(1e-4)

    def test_decay_series_fig4(self, tmp_path, capsys):
        code, _, _ = run(["run", "--config", "fig4", "--scenario", "decay_series", "--out", tmp_path],
                         capsys)
        assert code == cli.EXIT_OK
        s = read_json(tmp_path / "decay_series_fig4.json")
        assert s["lifetime_s"] == pytest.approx(1 / 3.0e3, rel=0.02)
        cols = read_csv(tmp_path / "decay_series_fig4.csv")
        assert cols["period_s"].size == 6

    def test_nutation_fig3(self, tmp_path, capsys):
        code, _, _ = run(["run", "--config", "fig3", "--scenario", "nutation", "--out", tmp_path],
                         capsys)
        assert code == cli.EXIT_OK
        s = read_json(tmp_path / "nutation_fig3.json")
        assert s["fitted_rabi_hz"] == pytest.approx(288e3, rel=0.03)
        assert s["calibration"]["slope_hz_per_v"] == pytest.approx(2400.0, rel=1e-9)
        assert s["calibration"]["relative_discrepancy"] <= 0.05

    def test_unknown_scenario(self, tmp_path, capsys):
        code, _, err = run(["run", "--config", "fig5", "--scenario", "echo", "--out", tmp_path], capsys)
        assert code == cli.EXIT_SCENARIO
        assert "unknown scenario" in err

    def test_invalid_config(self, tmp_path, capsys):
        p = tmp_path / "bad.toml"
        p.write_text(TABLE1.replace('"284.4 kHz"', "284.4"))
        code, _, err = run(["run", "--config", p, "--scenario", "refocusing", "--out", tmp_path],
                           capsys)
        assert code == cli.EXIT_CONFIG
        assert "rabi" in err

    @pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
    def test_unwritable_out_dir_permissions(self, tmp_path, capsys):
        d = tmp_path / "ro"
        d.mkdir(mode=0o500)
        code, _, _ = run(["run", "--config", "fig5", "--scenario", "refocusing", "--out", d], capsys)
        assert code == cli.EXIT_OUTPUT

    def test_out_dir_is_a_file(self, tmp_path, capsys):
        f = tmp_path / "file"
        f.write_text("")
        code, _, err = run(["run", "--config", "fig5", "--scenario", "refocusing", "--out", f], capsys)
        assert code == cli.EXIT_OUTPUT
        assert "cannot write" in err

    def test_exit_codes_are_distinct(self):
        codes = {cli.EXIT_OK, cli.EXIT_USAGE, cli.EXIT_SCENARIO, cli.EXIT_CONFIG, cli.EXIT_OUTPUT}
        assert len(codes) == 5


class TestDeterminism:
    @pytest.mark.parametrize("scenario,config", [("refocusing", "fig5"), ("spheres", "fig2")])
    def test_byte_identical_reruns(self, tmp_path, capsys, scenario, config):
        outs = []
        for k, workers in enumerate((1, 1, 4)):
            d = tmp_path / str(k)
            assert run(["run", "--config", config, "--scenario", scenario, "--seed", 3,
                        "--workers", workers, "--out", d], capsys)[0] == 0
            outs.append(files_bytes(d))
        assert outs[0] == outs[1] == outs[2]

    def test_ode_engine_independent_of_workers(self, tmp_path, capsys):
        cfg = tmp_path / "small.toml"
        cfg.write_text(TABLE1 + 'nodes = 31\n[sequence]\nperiod = "0.2 ms"\n[trace]\nsamples = 41\n')
        outs = []
        for workers in (1, 2):
            d = tmp_path / f"w{workers}"
            code, _, _ = run(["run", "--config", cfg, "--scenario", "refocusing", "--engine", "ode",
                              "--workers", workers, "--out", d], capsys)
            assert code == 0
            outs.append(files_bytes(d))
        assert outs[0] == outs[1]

    def test_seed_changes_sampled_spins(self, tmp_path, capsys):
        for seed in (1, 2):
            run(["run", "--config", "fig2", "--scenario", "spheres", "--seed", seed,
                 "--snapshot-times", "0T", "--out", tmp_path / str(seed)], capsys)
        a = (tmp_path / "1" / "spheres_fig2_s0.csv").read_bytes()
        b = (tmp_path / "2" / "spheres_fig2_s0.csv").read_bytes()
        assert a != b
