import pytest

from timgen.config import TrainConfig
from timgen.dataio import group_by_user
from timgen.synthetic import ScenarioSpec, generate, generate_dataset

SMALL_SPEC = ScenarioSpec(n_users=12, seq_len_min=3, seq_len_max=6, items_per_class=20, seed=5,
                          d_text=4, d_img=4, d_video=4, d_audio=4, geo_vocab=8)
SMALL_CONFIG = TrainConfig(
    epochs=2, batch_size=4, d_model=8, n_heads=2, n_layers=1, d_ff=8, d_latent=3, decoder_hidden=8,
    t_max=8, geo_vocab=8, d_action=2, d_device=2, d_platform=2, d_geo=2, d_abs=4, d_gap=2,
    gap_buckets=16, d_text=4, d_img=4, d_video=4, d_audio=4,
)


@pytest.fixture(scope="session")
def small_data():
    return generate(SMALL_SPEC)


@pytest.fixture(scope="session")
def small_users(small_data):
    return group_by_user(small_data.interactions)


@pytest.fixture(scope="session")
def small_dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    generate_dataset(SMALL_SPEC, out)
    return out


@pytest.fixture(scope="session")
def small_config_file(tmp_path_factory):
    from timgen.config import format_config

    path = tmp_path_factory.mktemp("cfg") / "train.cfg"
    path.write_text(format_config(SMALL_CONFIG))
    return path
