import json
import math

import pytest

from hmm_icl.utils.config import GlobalConfig, apply_overrides, build_parser, load_experiment
from hmm_icl.utils.errors import ConfigValidationError
from hmm_icl.utils.schema import ExperimentConfig, parse_experiment


class TestParser:
    """
    Subcommands and global options of the command line.
    """

    def setup_method(self, test_func):
        """
        A fresh parser for every test.
        """
        self.parser = build_parser()

    def test_measure_options(self):
        """
        Experiment options are collected per subcommand.
        """
        args = self.parser.parse_args(["--quiet", "measure", "--config", "run.json",
                                       "--set", "layout.n=40", "--set", "construction.T=3", "--seed", "7"])
        assert args.command == "measure"
        assert args.quiet
        assert args.config == "run.json"
        assert args.overrides == ["layout.n=40", "construction.T=3"]
        assert args.seed == 7

    def test_sweep_grid_axes(self):
        """
        Grid axes take several integers and default to empty lists.
        """
        args = self.parser.parse_args(["sweep", "--n", "10", "20", "--T", "0", "5"])
        assert args.n == [10, 20]
        assert args.T == [0, 5]
        assert args.L == []
        assert args.out == "sweep.csv"

    def test_build_stack_dump_flags(self):
        """
        Dump destinations use dashed flag names.
        """
        args = self.parser.parse_args(["build-stack", "--dump-stack", "stack.json", "--trace-layers", "trace"])
        assert args.dump_stack == "stack.json"
        assert args.trace_layers == "trace"

    def test_unknown_log_level_is_rejected(self):
        """
        Log levels are restricted to the standard names.
        """
        with pytest.raises(SystemExit):
            self.parser.parse_args(["--log_level", "LOUD", "verify"])


class TestOverrides:
    """
    Dotted ``--set`` overrides merged into the raw config.
    """

    def test_values_are_parsed_as_json(self):
        """
        Numbers become numbers; bare words stay strings.
        """
        raw = apply_overrides({}, ["layout.n=40", "construction.beta1=hardmax", "construction.lr=0.01"])
        assert raw == {"layout": {"n": 40}, "construction": {"beta1": "hardmax", "lr": 0.01}}

    def test_existing_sections_are_updated(self):
        """
        Overrides merge into sections already present.
        """
        raw = apply_overrides({"layout": {"n": 10, "L": 3}}, ["layout.L=4"])
        assert raw == {"layout": {"n": 10, "L": 4}}

    def test_malformed_override(self):
        """
        An override without ``=`` is a validation error.
        """
        with pytest.raises(ConfigValidationError):
            apply_overrides({}, ["layout.n"])

    def test_override_into_scalar(self):
        """
        An override cannot descend into a non-object value.
        """
        with pytest.raises(ConfigValidationError):
            apply_overrides({"seed": 3}, ["seed.value=1"])


class TestLoadExperiment:
    """
    Config file, overrides and seed combined into one validated experiment.
    """

    def setup_method(self, test_func):
        """
        The parser used to build argument namespaces.
        """
        self.parser = build_parser()

    def test_file_overrides_and_seed(self, tmp_path):
        """
        ``--set`` wins over the file and ``--seed`` wins over both.
        """
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"layout": {"n": 12, "L": 3, "k": 5}, "seed": 1}), encoding="utf-8")
        args = self.parser.parse_args(["measure", "--config", str(path), "--set", "layout.n=30",
                                       "--set", "construction.beta1=hardmax", "--seed", "9"])
        config = load_experiment(args)
        assert config.layout.n == 30
        assert config.seed == 9
        assert math.isinf(config.construction.beta1)

    def test_invalid_field_is_reported(self):
        """
        Unknown keys fail validation with the offending path in the message.
        """
        args = self.parser.parse_args(["measure", "--set", "layout.width=3"])
        with pytest.raises(ConfigValidationError) as info:
            load_experiment(args)
        assert "layout.width" in str(info.value)


class TestSchema:
    """
    Validation rules of the experiment model.
    """

    def test_defaults(self):
        """
        An empty config generates an HMM and uses the default sizes.
        """
        config = parse_experiment({})
        assert isinstance(config, ExperimentConfig)
        assert config.hmm is not None and config.mixture is None
        assert config.num_mc == 200
        assert math.isinf(config.construction.beta1)

    def test_lengths_must_be_ordered(self):
        """
        ``k > L > m`` is required.
        """
        with pytest.raises(ConfigValidationError):
            parse_experiment({"layout": {"L": 4, "k": 4}})
        with pytest.raises(ConfigValidationError):
            parse_experiment({"layout": {"L": 3, "k": 6, "m": 3}})

    def test_hmm_and_mixture_are_exclusive(self):
        """
        An experiment runs on a single HMM or a mixture, not both.
        """
        with pytest.raises(ConfigValidationError):
            parse_experiment({"hmm": {}, "mixture": {}})

    def test_hardmax_survives_json_dump(self):
        """
        An infinite ``beta1`` is written as ``"hardmax"`` and parses back to infinity.
        """
        dumped = parse_experiment({}).model_dump(mode="json")
        assert dumped["construction"]["beta1"] == "hardmax"
        assert math.isinf(parse_experiment(dumped).construction.beta1)
        assert parse_experiment({"construction": {"beta1": 100.0}}).model_dump(mode="json")["construction"]["beta1"] == 100.0

    def test_non_positive_beta_is_rejected(self):
        """
        The copy sharpness must be positive.
        """
        with pytest.raises(ConfigValidationError):
            parse_experiment({"construction": {"beta1": 0}})


class TestGlobalConfig:
    """
    Run-wide option storage.
    """

    def test_bind_and_fetch(self):
        """
        Bound arguments are visible everywhere; missing keys return the fallback.
        """
        GlobalConfig.bind(build_parser().parse_args(["--quiet", "verify"]))
        assert GlobalConfig.fetch("quiet") is True
        assert GlobalConfig.fetch("missing", 5) == 5
        GlobalConfig.assign("quiet", False)
        assert GlobalConfig.fetch("quiet") is False
        assert GlobalConfig() is GlobalConfig()


if __name__ == "__main__":
    pytest.main()
