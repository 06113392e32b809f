"""Shared program texts for tests that predate the packaged corpus."""

import math

import pytest

# representative input amplitudes for the teleport programs: two basis
# states, an equal superposition, and a complex-phase pair
TELEPORT_AMPS = (
    (1.0, 0.0),
    (0.0, 1.0),
    (1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0)),
    (0.6, 0.8j),
)


@pytest.fixture
def teleport_amps():
    return TELEPORT_AMPS


TELEPORT = """\
channel c[1] between l, r;

membrane l {
  new x[2] = z0|00> + z1|11>;
  process {
    x[1] ++ c[0] *= CX;
    x[1] *= H;
    u = measure x[1];
    w = measure c[0];
    a ! u;
    a ! w;
  }
}

membrane r {
  process {
    a ? (u);
    a ? (w);
    if u { c[0] *= Z; }
    if w { c[0] *= X; }
  }
}
"""

FIG4_DEMO = """\
channel c[1] between l, u;
channel cp[1] between u, r;

membrane l { process { skip } }

membrane u {
  process { cp[0] ++ c[0] *= CX; }
  process { cp[0] *= X; }
}

membrane r { process { skip } }
"""

SENDRECV = """\
membrane l {
  process { a ! 1; }
  process { skip }
}

membrane r {
  process { a ? (y); }
  process { skip }
}
"""
