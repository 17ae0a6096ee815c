from pathlib import Path

import pytest

from bridge import GraphBridge
from config import Config


class TestConfig:

    def test_defaults(self):
        values = Config.load()
        assert values["alpha_x"] == values["alpha_a"] == -0.5
        assert values["sigma1_sq_a"] == 0.04
        assert values["T"] == 1.0
        assert values["loss_mode"] == "weighted_gamma"

    def test_file_overrides_defaults(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("alpha_a = 0.3   # 邻接通道\nT = 2.0\nepochs = 7\nloss_mode = simplified_c\n",
                        encoding="utf-8")
        values = Config.load(str(path))
        assert values["alpha_a"] == 0.3
        assert values["alpha_x"] == -0.5
        assert values["T"] == 2.0
        assert values["epochs"] == 7
        assert values["loss_mode"] == "simplified_c"
        bridge = GraphBridge.from_config(values)
        assert bridge.T == 2.0

    def test_command_line_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("epochs = 7\n", encoding="utf-8")
        assert Config.load(str(path), {"epochs": 3})["epochs"] == 3
        assert Config.load(str(path), {"epochs": None})["epochs"] == 7

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("learning_rate = 0.1\n", encoding="utf-8")
        with pytest.raises(ValueError, match="learning_rate"):
            Config.load(str(path))

    def test_bad_loss_mode(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("loss_mode = huber\n", encoding="utf-8")
        with pytest.raises(ValueError):
            Config.load(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            Config.load(str(tmp_path / "absent.cfg"))

    def test_toy_recipe(self):
        values = Config.load(str(Path(__file__).resolve().parents[1] / "configs" / "toy.cfg"))
        assert values["loss_mode"] == "simplified_c"
        assert values["lr_final"] == 0.0005
        assert values["rw_steps"] == 6
        assert Config.load()["lr_final"] is None
