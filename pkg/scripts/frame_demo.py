#!/usr/bin/env python3
"""Show the wire format: encode a poll and its reading response, dump
them annotated, and print per-link round-trip timing at a given range.

Usage: python scripts/frame_demo.py [distance_m]
"""

import sys

sys.path.insert(0, "src")

from amrsim.netsim import PRESET_DATA_RATES, PRESET_RANGES_M  # noqa: E402
from amrsim.protocol import (  # noqa: E402
    encode_frame,
    hexdump,
    make_poll,
    make_reading,
)


def main() -> None:
    distance = float(sys.argv[1]) if len(sys.argv) > 1 else 5000.0
    poll = encode_frame(make_poll(src=0, target=0x2A, seq=7))
    reading = encode_frame(make_reading(src=0x2A, dst=0, seq=7,
                                        register=15000, timestamp=86400,
                                        flags=0))
    print("broadcast POLL selecting meter 0x2a:")
    print(hexdump(poll))
    print("\nREADING response (register 15000 = 25.000 kWh at K=600):")
    print(hexdump(reading))
    print(f"\nround trip at {distance:.0f} m (poll {len(poll)} B,"
          f" reading {len(reading)} B):")
    for name, rate in PRESET_DATA_RATES.items():
        rng = PRESET_RANGES_M[name]
        rtt = (len(poll) + len(reading)) * 8.0 / rate + 2 * distance / 3e8
        reach = "in range" if rng is None or distance <= rng else "OUT OF RANGE"
        print(f"  {name:>6}: {rtt * 1e6:9.3f} us  ({reach})")


if __name__ == "__main__":
    main()
