import pytest
from pydantic import ValidationError

from pcodeguard.core.config import Settings
from pcodeguard.schemas import CustomInvariant, RunConfig, Strategy


def base(**values):
    return {"listings": [{"path": "a.pcode"}], **values}


def test_defaults_come_from_settings():
    config = RunConfig.model_validate(base())
    assert config.strategy is Strategy.S1
    assert config.max_forks == 64
    assert config.max_depth == 16
    assert config.validate_witnesses


def test_hex_strings_are_accepted():
    config = RunConfig.model_validate(base(start="0x201000", stubs=[{"address": "0x300000", "name": "malloc", "value": "0x1000"}]))
    assert config.start == 0x201000
    assert config.stubs[0].value == 0x1000


def test_s3_requires_a_function():
    with pytest.raises(ValidationError):
        RunConfig.model_validate(base(strategy="S3"))
    config = RunConfig.model_validate(base(strategy="S3", func={"address": "0x201100", "arg_count": 1}))
    assert config.func.arg_count == 1


def test_function_start_only_with_s3():
    with pytest.raises(ValidationError):
        RunConfig.model_validate(base(func={"address": 0x10, "arg_count": 1}))


def test_argument_count_is_bounded():
    with pytest.raises(ValidationError):
        RunConfig.model_validate(base(strategy="S3", func={"address": 0x10, "arg_count": 7}))


def test_unknown_keys_are_rejected():
    with pytest.raises(ValidationError):
        RunConfig.model_validate(base(max_path=3))


def test_listings_required():
    with pytest.raises(ValidationError):
        RunConfig.model_validate({"listings": []})


def test_noop_callothers_from_environment(monkeypatch):
    monkeypatch.setenv("PCODEGUARD_NOOP_CALLOTHERS", "LOCK, fence")
    assert Settings().NOOP_CALLOTHERS == ["lock", "fence"]


def test_custom_invariant_register_field():
    assert set(CustomInvariant.model_fields) >= {"register_name"}
    assert "register" not in CustomInvariant.model_fields
    from_file = CustomInvariant.model_validate(
        {"name": "n", "address": "0x10", "register": "RDI", "comparator": "ult", "constant": 4}
    )
    assert from_file.register_name == "RDI"
    by_name = CustomInvariant(name="n", address=0x10, register_name="rdi", comparator="ult", constant=4)
    assert by_name.model_dump(by_alias=True)["register"] == "rdi"
    config = RunConfig.model_validate(base(custom_invariants=[from_file.model_dump(by_alias=True)]))
    assert config.custom_invariants[0].register_name == "RDI"
