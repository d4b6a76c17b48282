import pytest

from deltavar import ProblemFileError, parse_problem_text

GOOD = """
# a quotient problem
[timescale]
kind = points
values = 0, 0.5, 1

[functional]
H = "u1 / u2"
f1 = "t*v"
f2 = "v^2"

[boundary]
left = fixed 0
right = fixed 1
"""

CONSTRAINED = GOOD + """
[constraint]
P = "u1"
g1 = "t*v"
k = 1
"""


class TestParsing:
    def test_good_file(self):
        pf = parse_problem_text(GOOD, name="quotient")
        assert pf.name == "quotient"
        assert len(pf.timescale) == 3
        assert pf.lagrangian.n == 2
        assert pf.bc.left == 0.0 and pf.bc.right == 1.0
        assert pf.constraint is None

    def test_constraint_section(self):
        pf = parse_problem_text(CONSTRAINED)
        assert pf.constraint is not None
        assert pf.constraint.target == 1.0
        assert pf.constraint.functional.n == 1

    def test_build_produces_spec(self):
        spec = parse_problem_text(GOOD).build()
        assert spec.constraint is None
        assert len(spec.ts) == 3

    def test_h_override_rediscretizes(self):
        spec = parse_problem_text(GOOD).build(h_override=0.1)
        assert len(spec.ts) == 11
        assert spec.ts.kind == "interval"

    def test_comments_and_blank_lines_ignored(self):
        text = GOOD.replace('H = "u1 / u2"', 'H = "u1 / u2"  # outer map')
        assert parse_problem_text(text).lagrangian.n == 2

    def test_interval_scale(self):
        text = GOOD.replace(
            "kind = points\nvalues = 0, 0.5, 1",
            "kind = interval\na = 0\nb = 1\nh = 0.25",
        )
        assert len(parse_problem_text(text).timescale) == 5

    def test_union_scale(self):
        text = GOOD.replace(
            "kind = points\nvalues = 0, 0.5, 1",
            "kind = union\nparts = points 0 0.5 1 | interval a=2 b=3 h=0.5",
        )
        ts = parse_problem_text(text).timescale
        assert list(ts.points) == [0, 0.5, 1, 2, 2.5, 3]

    def test_free_boundary(self):
        text = GOOD.replace("left = fixed 0", "left = free")
        assert parse_problem_text(text).bc.left is None


class TestDiagnostics:
    def expect_error(self, text, fragment):
        with pytest.raises(ProblemFileError) as err:
            parse_problem_text(text)
        assert fragment in str(err.value)
        return err.value

    def test_missing_section(self):
        self.expect_error("[timescale]\nkind = points\nvalues = 0, 0.5, 1\n",
                          "missing required section")

    def test_unknown_section(self):
        self.expect_error(GOOD + "\n[extras]\nfoo = 1\n", "unknown section")

    def test_unquoted_expression(self):
        self.expect_error(GOOD.replace('"v^2"', "v^2"), "quoted")

    def test_expression_error_carries_line(self):
        err = self.expect_error(GOOD.replace('"t*v"', '"t*"'), "in f1")
        assert err.line == 9

    def test_u_index_mismatch(self):
        self.expect_error(GOOD.replace('"u1 / u2"', '"u1"'), "u1")

    def test_missing_inner_integrand(self):
        self.expect_error(GOOD.replace('f1 = "t*v"\n', ""), "contiguous")

    def test_bad_boundary(self):
        self.expect_error(GOOD.replace("fixed 0", "pinned 0"), "left")

    def test_constraint_requires_fixed_ends(self):
        text = CONSTRAINED.replace("left = fixed 0", "left = free")
        self.expect_error(text, "fixed")

    def test_duplicate_key(self):
        self.expect_error(GOOD + "\n[constraint]\nk = 1\nk = 2\n", "duplicate key")

    def test_bad_number(self):
        self.expect_error(GOOD.replace("values = 0, 0.5, 1", "values = 0, x, 1"),
                          "number")

    def test_key_outside_section(self):
        self.expect_error("kind = points\n" + GOOD, "outside")
