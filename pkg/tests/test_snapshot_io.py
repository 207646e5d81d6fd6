"""Tests for .sfld and profile snapshot files."""
import numpy as np

from src.fields.snapshot_io import read_sfld, read_state, write_sfld, write_state


def test_sfld_round_trip_is_bit_exact(tmp_path, rough_field):
    rough_field.metadata = {"kind": "test", "scale": 0.1 + 0.2}
    path = write_sfld(rough_field, tmp_path / "field.sfld")
    loaded = read_sfld(path)
    assert loaded.grid == rough_field.grid
    assert np.array_equal(loaded.values, rough_field.values)
    assert np.array_equal(loaded.boundary_value, rough_field.boundary_value)
    assert loaded.metadata == rough_field.metadata
    assert loaded.digest() == rough_field.digest()


def test_write_state_picks_suffix(tmp_path, rough_field, bubble_profile_state):
    field_path = write_state(rough_field, tmp_path / "snap_0.500000")
    profile_path = write_state(bubble_profile_state, tmp_path / "snap_0.250000")
    assert field_path.name == "snap_0.500000.sfld"
    assert profile_path.name == "snap_0.250000.npz"

    profile = read_state(profile_path)
    assert np.array_equal(profile.r_nodes, bubble_profile_state.r_nodes)
    assert np.array_equal(profile.h_values, bubble_profile_state.h_values)
    assert profile.m == bubble_profile_state.m
    assert np.array_equal(read_state(field_path).values, rough_field.values)
