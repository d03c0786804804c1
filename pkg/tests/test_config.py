"""Line-oriented config grammar: typing, sections, schema rejection."""

import pytest

from neuropgm import ConfigError, parse_config, parse_config_text


def test_sectioned_key_parses_to_the_tree():
    tree = parse_config_text("[srm]\nk = 5\n")
    assert tree == {"srm": {"k": 5}}


def test_values_are_typed_by_shape():
    tree = parse_config_text("""\
[run]
snr = 1.5
iters = 40
verbose = true
quiet = FALSE
name = pilot-a
dims = 4,8,12
mixed = 1,2.5,x
""")
    run = tree["run"]
    assert run["snr"] == 1.5 and isinstance(run["snr"], float)
    assert run["iters"] == 40 and isinstance(run["iters"], int)
    assert run["verbose"] is True and run["quiet"] is False
    assert run["name"] == "pilot-a"
    assert run["dims"] == [4, 8, 12]
    assert run["mixed"] == [1, 2.5, "x"]


def test_keys_before_any_section_live_in_the_root_section():
    tree = parse_config_text("seed = 7\n[a]\nx = 1\n")
    assert tree[""]["seed"] == 7 and tree["a"]["x"] == 1


def test_comments_and_blank_lines_are_ignored():
    tree = parse_config_text("# top\n\n[a]\n; note\nx = 1\n")
    assert tree == {"a": {"x": 1}}


def test_duplicate_key_error_names_both_lines():
    text = "[a]\nx = 1\ny = 2\nx = 3\n"
    with pytest.raises(ConfigError) as err:
        parse_config_text(text)
    msg = str(err.value)
    assert ":4:" in msg and "line 2" in msg and "'x'" in msg


def test_unknown_key_is_rejected_with_its_line_number():
    with pytest.raises(ConfigError) as err:
        parse_config_text("[a]\ngood = 1\nbad = 2\n",
                          schema={"a": ("good",)})
    msg = str(err.value)
    assert ":3:" in msg and "'bad'" in msg


def test_unknown_section_is_rejected_with_its_line_number():
    with pytest.raises(ConfigError) as err:
        parse_config_text("[mystery]\nx = 1\n", schema={"a": ("x",)})
    assert ":2:" in str(err.value) and "mystery" in str(err.value)


def test_line_without_equals_is_rejected():
    with pytest.raises(ConfigError) as err:
        parse_config_text("[a]\njust words\n")
    assert ":2:" in str(err.value)


def test_bad_key_characters_are_rejected():
    with pytest.raises(ConfigError):
        parse_config_text("[a]\nspaced key = 1\n")


def test_parse_config_reads_from_disk_and_names_the_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("[a]\nx = 1\nx = 2\n", encoding="utf-8")
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    assert str(path) in str(err.value)
    path.write_text("[a]\nx = 3\n", encoding="utf-8")
    assert parse_config(path) == {"a": {"x": 3}}
