import pytest

from pufkex import accounting
from pufkex.accounting import (
    PAPER,
    VariantProperties,
    bits_transferred,
    figures,
    format_table,
    honest_flows,
    nvm_requirement,
    property_matrix,
    transfer_count,
)
from pufkex.harness import build_world
from pufkex.protocol import Variant, run_session

TRANSFERS = {"A": (4, 4), "B": (4, 5), "C": (1, 4), "D": (2, 5)}
BITS = {"A": (6576, 6736), "B": (6832, 7296), "C": (6320, 6368), "D": (6576, 6928)}
TOTAL_BITS = {"A": 13312, "B": 14128, "C": 12688, "D": 13504}
NVM = {"A": 256, "B": 6832, "C": 0, "D": 6576}


def test_constants_are_consistent():
    assert PAPER.device_cert_bits == 6576
    assert PAPER.server_cert_bits == 560
    assert PAPER.hd_bits == 6016


@pytest.mark.parametrize("variant", "ABCD")
def test_paper_mode_counts(variant):
    assert (transfer_count(variant, "I"), transfer_count(variant, "II")) == TRANSFERS[variant]


@pytest.mark.parametrize("variant", "ABCD")
def test_paper_mode_bits(variant):
    assert (bits_transferred(variant, "I"), bits_transferred(variant, "II")) == BITS[variant]
    assert figures(variant).total_bits == TOTAL_BITS[variant]


@pytest.mark.parametrize("variant", "ABCD")
def test_paper_mode_nvm(variant):
    assert nvm_requirement(variant) == NVM[variant]


def test_flows_match_expected_stage2_sequence():
    from pufkex.harness import expected_stage2

    for v in Variant:
        assert [f.msg_type for f in honest_flows(v) if f.stage == "II"] == expected_stage2(v)


def test_property_matrix():
    expected = {
        Variant.A: VariantProperties(True, True, "negligible", True, "online", True),
        Variant.B: VariantProperties(True, True, "large", False, "offline", True),
        Variant.C: VariantProperties(True, False, "none", True, "online", False),
        Variant.D: VariantProperties(True, False, "large", False, "offline", False),
    }
    assert property_matrix() == expected


@pytest.mark.parametrize("variant", list(Variant))
def test_measured_mode_counts_match_paper(variant, ttp_keypair):
    world = build_world(variant, seed=1, ttp_keypair=ttp_keypair)
    result = run_session(variant, world.server, world.device)
    log = world.enrollment.log + result.channel.log
    assert transfer_count(variant, "II", "measured", log) == transfer_count(variant, "II")
    assert transfer_count(variant, "I", "measured", log) == transfer_count(variant, "I")
    measured = bits_transferred(variant, "II", "measured", log)
    device_frames = [r for r in result.log if "device" in (r.sender, r.receiver)]
    assert measured == sum(r.bits for r in device_frames)


@pytest.mark.parametrize("variant", list(Variant))
def test_measured_mode_exposes_real_sizes(variant, ttp_keypair):
    # real helper data is 1536 bytes and signatures 64, so the wire is bigger
    world = build_world(variant, seed=2, ttp_keypair=ttp_keypair)
    result = run_session(variant, world.server, world.device)
    log = world.enrollment.log + result.channel.log
    fig = figures(variant, "measured", log, world.device.nvm.bits())
    assert fig.total_bits > figures(variant).total_bits
    assert (fig.nvm == 0) == (variant is Variant.C)


def test_mode_validation():
    with pytest.raises(ValueError):
        transfer_count("A", "I", "guess")
    with pytest.raises(ValueError):
        bits_transferred("A", "I", "measured")


def test_table_layout():
    text = format_table({v: figures(v) for v in Variant})
    lines = text.splitlines()
    assert "Variant A" in lines[0] and "Variant D" in lines[0]
    total_rows = [line for line in lines if line.strip().startswith("Total:")]
    assert total_rows[0].split()[1:] == ["8", "9", "5", "7"]
    assert total_rows[1].split()[1:] == ["13312", "14128", "12688", "13504"]
    nvm = next(line for line in lines if line.startswith("NVM"))
    assert nvm.split()[-4:] == ["256", "6832", "0", "6576"]
    assert "{Certid}{PKttp}" in text


def test_module_exports_variants():
    assert accounting.VARIANTS == tuple(Variant)
