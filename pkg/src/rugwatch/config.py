"""Shared chain constants and tunable defaults."""
from __future__ import annotations

from fractions import Fraction

ZERO_ADDRESS = "0x" + "0" * 40

# Canonical mainnet deployments; the simulator reuses them so synthetic
# streams look like real ones.
WETH_ADDRESS = "0xc02aaa39b223fe8d0a0e5c4f27ead9083c756cc2"
FACTORY_ADDRESS = "0x5c69bee701ef814a2b6a3edd4b1652cb9cc5aa6f"

# Liquidity-locker contracts.  LP transfers into any of these count as a
# lock; the list is configurable on the CLI.
DEFAULT_LOCKERS = ("0x663a5c229c09b049e36dcc11a9b0d4a8eb9db214",)

WETH_DECIMALS = 18

# Pool swap fee applied on the input side.
DEFAULT_FEE = Fraction(3, 1000)

SECONDS_PER_BLOCK = 13
SECONDS_PER_DAY = 86_400

# Trailing window with no activity that marks a token as abandoned.
INACTIVITY_DAYS = 30

# ~1 day of blocks; grid used for balance-concentration and graph series.
PERIOD_BLOCKS = 6_500

# ~1 hour of blocks; grid used for the early-detection snapshots.
BLOCKS_PER_HOUR = 277

# Label thresholds, kept as exact rationals so boundary comparisons are
# not at the mercy of float rounding.
THETA_LIQUIDITY = Fraction(1)
THETA_PRICE = Fraction(9, 10)
THETA_RECOVERY = Fraction(1, 100)

MAX_UINT256 = 2**256 - 1
