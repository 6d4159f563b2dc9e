import pytest

from quick_start import main


class TestMain:
    """
    Error reporting of the command-line entry point.
    """

    def setup_method(self, test_func):
        """
        Nothing to prepare; every test sends logs to its own folder.
        """

    def _run(self, tmp_path, *argv):
        with pytest.raises(SystemExit) as info:
            main(["--quiet", "--log_folder", str(tmp_path / "log"), *argv])
        return info.value.code

    def test_negative_seed_is_reported(self, tmp_path, capsys):
        """
        A seed outside the unsigned 64-bit range ends with an ``[ERROR]`` line and exit code 2.
        """
        code = self._run(tmp_path, "gen-hmm", "--seed", "-1", "--out", str(tmp_path / "hmm.json"))
        assert code == 2
        assert "[ERROR] InvalidDimensionError" in capsys.readouterr().out
        assert not (tmp_path / "hmm.json").exists()

    def test_missing_config_file_is_reported(self, tmp_path, capsys):
        """
        A config path that does not exist is reported instead of raising.
        """
        code = self._run(tmp_path, "measure", "--config", str(tmp_path / "nope.json"))
        assert code == 2
        assert "[ERROR] FileNotFoundError" in capsys.readouterr().out

    def test_invalid_override_is_reported(self, tmp_path, capsys):
        """
        A config that fails validation exits with code 2.
        """
        code = self._run(tmp_path, "measure", "--set", "layout.L=9")
        assert code == 2
        assert "[ERROR] ConfigValidationError" in capsys.readouterr().out

    def test_generated_hmm_is_written(self, tmp_path, capsys):
        """
        A valid command exits with code 0 and writes its output.
        """
        code = self._run(tmp_path, "gen-hmm", "--seed", "3", "--out", str(tmp_path / "hmm.json"))
        assert code == 0
        assert (tmp_path / "hmm.json").exists()
        assert "[ERROR]" not in capsys.readouterr().out


if __name__ == "__main__":
    pytest.main()
