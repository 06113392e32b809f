"""Parser, printer, and expansion tests."""
import pytest
from hypothesis import given, settings, strategies as st

from disq import syntax as sx
from disq.qstate import Range

from conftest import TELEPORT


def seq(*steps):
    proc = sx.PNil()
    for s in reversed(steps):
        if isinstance(s, (sx.ASend, sx.ARecv)):
            proc = sx.PComm(s, proc)
        else:
            proc = sx.PLocal(s, proc)
    return proc


def test_skip_membrane():
    prog = sx.parse_program("membrane l { process { skip } }")
    assert prog == sx.Program((sx.MCell("l", (sx.PNil(),)),), (), ())


def test_teleport_expansion():
    prog = sx.parse_program(TELEPORT)
    x1 = Range("x", 1, 2)
    c0 = Range("c", 0, 1)
    sender = seq(
        sx.AUnitary((x1, c0), "CX"),
        sx.AUnitary((x1,), "H"),
        sx.AMeasure("u", (x1,)),
        sx.AMeasure("w", (c0,)),
        sx.ASend("a", sx.Var("u")),
        sx.ASend("a", sx.Var("w")),
    )
    fix_w = sx.PIf(sx.Var("w"), seq(sx.AUnitary((c0,), "X")), sx.PNil())
    fix_u = sx.PIf(sx.Var("u"),
                   sx.PLocal(sx.AUnitary((c0,), "Z"), fix_w),
                   fix_w)
    receiver = sx.PComm(sx.ARecv("a", "u"), sx.PComm(sx.ARecv("a", "w"), fix_u))
    assert prog.membranes == (
        sx.MNewChannel("c", 1, sx.MCell("l", (sender,))),
        sx.MNewChannel("c", 1, sx.MCell("r", (receiver,))),
    )
    assert prog.initial == (
        sx.InitEntry("l", "x", 2, (sx.KetTerm(sx.Var("z0"), "00"),
                                   sx.KetTerm(sx.Var("z1"), "11"))),
    )
    assert prog.channels == (sx.ChannelDecl("c", 1, "l", "r"),)


def test_if_shares_continuation():
    prog = sx.parse_program("""
        membrane l {
          new x[1];
          process {
            a ? (u);
            if u { x[0] *= X; }
            x[0] *= H;
          }
        }
    """)
    cell = prog.membranes[0].cont
    proc = cell.processes[0]
    h_tail = seq(sx.AUnitary((Range("x", 0, 1),), "H"))
    want = sx.PComm(sx.ARecv("a", "u"), sx.PIf(
        sx.Var("u"),
        sx.PLocal(sx.AUnitary((Range("x", 0, 1),), "X"), h_tail),
        h_tail))
    assert proc == want


def test_rec_unrolls_in_order():
    prog = sx.parse_program("""
        membrane l {
          new x[3];
          process { rec j in [0, 3) { x[j] *= H; } }
        }
    """)
    cell = prog.membranes[0].cont
    assert cell.processes[0] == seq(
        sx.AUnitary((Range("x", 0, 1),), "H"),
        sx.AUnitary((Range("x", 1, 2),), "H"),
        sx.AUnitary((Range("x", 2, 3),), "H"),
    )


def test_rec_empty_is_nil():
    prog = sx.parse_program("""
        membrane l { new x[1]; process { rec j in [0, 0) { x[j] *= H; } } }
    """)
    assert prog.membranes[0].cont.processes[0] == sx.PNil()


def test_rec_gate_params_and_spans():
    prog = sx.parse_program("""
        membrane l {
          new x[3];
          process { rec j in [1, 3) { x[0, j + 1) *= SR(j); } }
        }
    """)
    cell = prog.membranes[0].cont
    assert cell.processes[0] == seq(
        sx.AUnitary((Range("x", 0, 2),), "SR", (1,)),
        sx.AUnitary((Range("x", 0, 3),), "SR", (2,)),
    )


def test_def_inlining_is_hygienic():
    prog = sx.parse_program("""
        membrane l {
          new x[2];
          def M(q) { u = measure q; a ! u; }
          process { M(x[0]); M(x[1]); }
        }
    """)
    proc = prog.membranes[0].cont.processes[0]
    assert isinstance(proc, sx.PLocal) and isinstance(proc.action, sx.AMeasure)
    u1 = proc.action.var
    send1 = proc.cont
    assert send1.action == sx.ASend("a", sx.Var(u1))
    m2 = send1.cont
    u2 = m2.action.var
    assert m2.action.ranges == (Range("x", 1, 2),)
    assert u1 != u2
    assert m2.cont.action == sx.ASend("a", sx.Var(u2))


def test_def_param_splices_locus():
    prog = sx.parse_program("""
        def Pair(p, q) { p ++ q *= CX; }
        membrane l {
          new x[4];
          process { Pair(x[0, 2), x[3]); }
        }
    """)
    proc = prog.membranes[0].cont.processes[0]
    assert proc.action == sx.AUnitary((Range("x", 0, 2), Range("x", 3, 4)), "CX")


def test_def_cycle_detected():
    with pytest.raises(sx.ExpandError, match="cycle"):
        sx.parse_program("""
            def A() { B(); }
            def B() { A(); }
            membrane l { process { A(); } }
        """)


def test_unbound_locus_parameter():
    with pytest.raises(sx.ExpandError, match="unbound"):
        sx.parse_program("membrane l { process { q *= H; } }")


def test_unknown_definition():
    with pytest.raises(sx.ExpandError, match="unknown process definition"):
        sx.parse_program("membrane l { process { Frob(); } }")


def test_parse_error_position():
    with pytest.raises(sx.ParseError) as err:
        sx.parse("membrane l {\n  process { skip }\n")
    assert err.value.line == 3


def test_parse_error_expected_set():
    with pytest.raises(sx.ParseError) as err:
        sx.parse("membrane l { frobnicate }")
    assert "process" in err.value.expected


def test_ket_width_mismatch():
    with pytest.raises(sx.ParseError, match="bits"):
        sx.parse("membrane l { new x[2] = |101>; process { skip } }")


def test_channel_names_must_exist():
    with pytest.raises(sx.ParseError, match="unknown membrane"):
        sx.parse("""
            channel c[1] between l, q;
            membrane l { process { skip } }
        """)


def test_channel_distinct_endpoints():
    with pytest.raises(sx.ParseError, match="distinct"):
        sx.parse("""
            channel c[1] between l, l;
            membrane l { process { skip } }
        """)


def test_duplicate_membrane_location():
    with pytest.raises(sx.ParseError, match="duplicate"):
        sx.parse("membrane l { process { skip } } membrane l { process { skip } }")


def test_channel_prefix_order_follows_declarations():
    prog = sx.parse_program("""
        channel c[1] between l, r;
        channel d[2] between l, r;
        membrane l { process { skip } }
        membrane r { process { skip } }
    """)
    m = prog.membranes[0]
    assert isinstance(m, sx.MNewChannel) and m.chan == "c"
    assert isinstance(m.cont, sx.MNewChannel) and m.cont.chan == "d"
    assert m.cont.cont == sx.MCell("l", (sx.PNil(),))


def test_new_prefix_order():
    prog = sx.parse_program("""
        membrane l { new x[1]; new y[2]; process { skip } }
    """)
    m = prog.membranes[0]
    assert m == sx.MNewArray("x", 1, sx.MNewArray("y", 2, sx.MCell("l", (sx.PNil(),))))


def test_roundtrip_teleport():
    surf = sx.parse(TELEPORT)
    assert sx.parse(sx.print_program(surf)) == surf


# --- random-program round trip ----------------------------------------------

_names = st.sampled_from(["x", "y", "t"])
_cvars = st.sampled_from(["u", "w", "v0"])
_chans = st.sampled_from(["a", "b"])


def _exprs(depth=2):
    base = st.one_of(
        st.integers(0, 7).map(sx.Lit),
        _cvars.map(sx.Var),
        st.tuples(_cvars, st.integers(0, 3)).map(
            lambda t: sx.BitIdx(t[0], sx.Lit(t[1]))),
    )
    if depth == 0:
        return base
    sub = _exprs(depth - 1)
    return st.one_of(
        base,
        sub.map(sx.Not),
        st.tuples(st.sampled_from(["+", "*", "==", "<", "^", "-"]), sub, sub).map(
            lambda t: sx.Bin(t[0], t[1], t[2])),
    )


_ranges = st.one_of(
    st.tuples(_names, st.integers(0, 3)).map(
        lambda t: sx.SynRange(t[0], sx.Lit(t[1]))),
    st.tuples(_names, st.integers(0, 2), st.integers(1, 2)).map(
        lambda t: sx.SynRange(t[0], sx.Lit(t[1]), sx.Lit(t[1] + t[2]))),
)


def _stmts(depth=1):
    base = st.one_of(
        st.just(sx.SSkip()),
        st.tuples(_ranges, st.sampled_from(["H", "X", "Z"])).map(
            lambda t: sx.SUnitary((t[0],), t[1])),
        st.tuples(_ranges, _ranges).map(
            lambda t: sx.SUnitary((t[0], t[1]), "CX")),
        st.tuples(_cvars, _ranges).map(lambda t: sx.SMeasure(t[0], (t[1],))),
        st.tuples(_chans, _exprs()).map(lambda t: sx.SSend(t[0], t[1])),
        st.tuples(_chans, _cvars).map(lambda t: sx.SRecv(t[0], t[1])),
        _exprs().map(sx.SPS),
    )
    if depth == 0:
        return base
    sub = st.lists(_stmts(depth - 1), max_size=3).map(tuple)
    return st.one_of(
        base,
        st.tuples(_exprs(), sub, sub).map(lambda t: sx.SIf(t[0], t[1], t[2])),
        st.tuples(st.sampled_from(["i", "j"]), st.integers(0, 2),
                  st.integers(0, 2), sub).map(
            lambda t: sx.SRec(t[0], sx.Lit(t[1]), sx.Lit(t[1] + t[2]), t[3])),
    )


_kets = st.lists(
    st.tuples(st.one_of(st.none(), st.sampled_from(["z0", "z1"]).map(sx.Var),
                        st.integers(0, 3).map(sx.Lit)),
              st.integers(0, 3)),
    min_size=1, max_size=2,
).map(lambda ts: tuple(sx.KetTerm(a, format(b, "02b")) for a, b in ts))

_news = st.lists(
    st.tuples(st.sampled_from(["x", "y", "t"]), st.one_of(st.none(), _kets)),
    max_size=2, unique_by=lambda t: t[0],
).map(lambda ts: tuple(
    sx.NewDecl(v, 2 if k else 4, k) for v, k in ts))

_programs = st.builds(
    lambda news, procs: sx.SurfaceProgram(
        (), (), (sx.SurfaceMembrane("l", news, (), procs),)),
    _news,
    st.lists(st.lists(_stmts(), max_size=4).map(tuple), min_size=1, max_size=2)
    .map(tuple),
)


@settings(max_examples=150, deadline=None)
@given(_programs)
def test_print_parse_identity(prog):
    assert sx.parse(sx.print_program(prog)) == prog
