import pytest

from pufkex.curve25519 import SigningKeyPair


@pytest.fixture(scope="session")
def ttp_keypair():
    return SigningKeyPair.from_seed(bytes(32))
