import json

import numpy as np
import pytest

from jmls_smoother.errors import ModelError
from jmls_smoother.fileio import (
    load_dataset,
    load_mixtures,
    load_model,
    model_from_dict,
    model_to_dict,
    save_dataset,
    save_mixtures,
    save_model,
)
from jmls_smoother.model import Dataset, simulate
from jmls_smoother.reference import example2_model, example3_model, example_prior, sinusoid_input
from jmls_smoother.smoother import run_smoother


class TestModelFile:
    @pytest.mark.parametrize("name,factory", [("example2", example2_model), ("example3", example3_model)])
    def test_round_trip(self, tmp_path, name, factory):
        model, prior = factory(), example_prior(name)
        save_model(tmp_path / "m.json", model, prior)
        model2, prior2 = load_model(tmp_path / "m.json")
        assert model2.timing is model.timing
        np.testing.assert_array_equal(model2.T, model.T)
        for a, b in zip(model.modes, model2.modes):
            for key in "ABCDQR":
                np.testing.assert_array_equal(getattr(a, key), getattr(b, key))
        for a, b in zip(prior.modes, prior2.modes):
            np.testing.assert_allclose(b.log_weight, a.log_weight, rtol=1e-15)
            np.testing.assert_array_equal(b.mean, a.mean)

    def test_transition_matrix_stored_by_column(self):
        doc = model_to_dict(example3_model())
        # column j lists the distribution of the next mode given mode j
        assert doc["T"] == [[0.99, 0.01], [0.0, 1.0]]

    def test_declared_dimension_checked(self):
        doc = model_to_dict(example2_model())
        doc["n"] = 2
        with pytest.raises(ModelError):
            model_from_dict(doc)

    def test_missing_field(self):
        doc = model_to_dict(example2_model())
        del doc["modes"]
        with pytest.raises(ModelError):
            model_from_dict(doc)

    def test_invalid_json(self, tmp_path):
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(ModelError):
            load_model(tmp_path / "bad.json")

    def test_prior_optional(self):
        _, prior = model_from_dict(model_to_dict(example2_model()))
        assert prior is None


class TestDatasetFile:
    def test_round_trip_is_exact(self, tmp_path):
        model, prior = example3_model(), example_prior("example3")
        data = simulate(model, prior, sinusoid_input(10), seed=3)
        save_dataset(tmp_path / "d.csv", data)
        back = load_dataset(tmp_path / "d.csv")
        for key in ("u", "y", "x", "z"):
            np.testing.assert_array_equal(getattr(back, key), getattr(data, key))
        header = (tmp_path / "d.csv").read_text().splitlines()[0]
        assert header == "t,u_1,y_1,x_1,x_2,z"
        assert (tmp_path / "d.csv").read_text().splitlines()[1].endswith(",1")

    def test_without_truth(self, tmp_path):
        save_dataset(tmp_path / "d.csv", Dataset(u=[[1.0], [2.0]], y=[[0.5], [0.25]]))
        back = load_dataset(tmp_path / "d.csv")
        assert back.x is None and back.z is None

    def test_empty_rejected(self, tmp_path):
        (tmp_path / "d.csv").write_text("t,u_1,y_1\n")
        with pytest.raises(ModelError):
            load_dataset(tmp_path / "d.csv")


class TestMixtureFile:
    def test_round_trip_is_exact(self, tmp_path):
        model, prior = example2_model(), example_prior("example2")
        data = simulate(model, prior, np.ones((6, 1)), seed=2)
        mixtures = [st.mixture for st in run_smoother(model, prior, data, 3, 3)]
        save_mixtures(tmp_path / "mix.csv", mixtures)
        back = load_mixtures(tmp_path / "mix.csv")
        assert len(back) == len(mixtures)
        for a, b in zip(mixtures, back):
            for sa, sb in zip(a.modes, b.modes):
                np.testing.assert_array_equal(sb.log_weight, sa.log_weight)
                np.testing.assert_array_equal(sb.mean, sa.mean)
                np.testing.assert_array_equal(sb.cov, sa.cov)
        assert (tmp_path / "mix.csv").read_text().startswith("# n=1 m=2 N=6\n")

    def test_header_required(self, tmp_path):
        (tmp_path / "mix.csv").write_text("k,mode,component,log_weight,mean_1,cov_11\n")
        with pytest.raises(ModelError):
            load_mixtures(tmp_path / "mix.csv")
