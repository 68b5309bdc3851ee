"""Recursive-descent parser for the probe SQL dialect.

Supported shape:

    SELECT [DISTINCT] select_list
    FROM table [alias] [INNER JOIN table [alias] ON ref = ref]...
    [WHERE predicate] [GROUP BY refs] [ORDER BY items] [LIMIT n]

select_list is `*`, column refs, or COUNT/SUM/AVG/MIN/MAX aggregates
(COUNT(*) and COUNT(DISTINCT col) included).  Predicates combine
comparisons, LIKE, IN and SEMANTIC_LIKE(col,'phrase',t) with AND/OR
and parentheses.  Identifiers are case-insensitive and come out
lowercase; aliases are erased during resolution.
"""

from __future__ import annotations

from ..errors import SqlError
from ..relational.types import BOOL, FLOAT64, INT64, TEXT
from .nodes import (
    AggregateNode,
    AggSpec,
    AndPred,
    ColumnRef,
    Comparison,
    FilterNode,
    InPred,
    JoinNode,
    LikePred,
    OrPred,
    OtherNode,
    OutCol,
    PlanNode,
    ProjectNode,
    ScanNode,
    SemanticLikePred,
)

_KEYWORDS = {
    "SELECT", "DISTINCT", "FROM", "INNER", "JOIN", "ON", "WHERE", "AND",
    "OR", "GROUP", "BY", "ORDER", "LIMIT", "LIKE", "IN", "ASC", "DESC",
    "COUNT", "SUM", "AVG", "MIN", "MAX", "SEMANTIC_LIKE", "TRUE", "FALSE",
}

_AGG_FUNCS = {"COUNT", "SUM", "AVG", "MIN", "MAX"}

_OPS = ("<=", ">=", "!=", "<>", "=", "<", ">")


class _Token:
    __slots__ = ("type", "value", "pos")

    def __init__(self, type_, value, pos):
        self.type = type_
        self.value = value
        self.pos = pos


def _tokenize(text: str):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "'":
            j = i + 1
            buf = []
            while True:
                if j >= n:
                    raise SqlError(f"unterminated string at position {i}")
                if text[j] == "'":
                    if j + 1 < n and text[j + 1] == "'":
                        buf.append("'")
                        j += 2
                        continue
                    break
                buf.append(text[j])
                j += 1
            tokens.append(_Token("string", "".join(buf), i))
            i = j + 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            is_float = False
            while j < n and (text[j].isdigit() or text[j] == "."):
                if text[j] == ".":
                    is_float = True
                j += 1
            if j < n and text[j] in "eE":
                is_float = True
                j += 1
                if j < n and text[j] in "+-":
                    j += 1
                while j < n and text[j].isdigit():
                    j += 1
            raw = text[i:j]
            try:
                value = float(raw) if is_float else int(raw)
            except ValueError:
                raise SqlError(f"bad number {raw!r} at position {i}")
            tokens.append(_Token("number", value, i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("ident", text[i:j], i))
            i = j
            continue
        matched = False
        for op in _OPS:
            if text.startswith(op, i):
                tokens.append(_Token("op", "!=" if op == "<>" else op, i))
                i += len(op)
                matched = True
                break
        if matched:
            continue
        if ch in "(),.*-+":
            tokens.append(_Token(ch, ch, i))
            i += 1
            continue
        raise SqlError(f"unexpected character {ch!r} at position {i}")
    tokens.append(_Token("end", None, n))
    return tokens


class _Parser:
    def __init__(self, text: str, catalog):
        self.text = text
        self.catalog = catalog
        self.tokens = _tokenize(text)
        self.pos = 0
        # alias -> table name, in FROM order
        self.tables: list = []
        self.aliases: dict = {}

    # ------------------------------------------------------------- plumbing

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        t = self.tokens[self.pos]
        self.pos += 1
        return t

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        raise SqlError(f"{msg} at position {tok.pos}")

    def at_keyword(self, kw: str) -> bool:
        t = self.peek()
        return t.type == "ident" and t.value.upper() == kw

    def eat_keyword(self, kw: str) -> bool:
        if self.at_keyword(kw):
            self.next()
            return True
        return False

    def expect_keyword(self, kw: str):
        if not self.eat_keyword(kw):
            self.error(f"expected {kw}")

    def expect(self, type_: str) -> _Token:
        t = self.peek()
        if t.type != type_:
            self.error(f"expected {type_}")
        return self.next()

    def expect_name(self) -> str:
        t = self.peek()
        if t.type != "ident" or t.value.upper() in _KEYWORDS:
            self.error("expected identifier")
        return self.next().value.lower()

    # ----------------------------------------------------------- resolution

    def resolve_ref(self, first: str, second) -> ColumnRef:
        if second is not None:
            table = self.aliases.get(first)
            if table is None:
                self.error(f"unknown table or alias {first!r}")
            schema = self.catalog.schema_of(table)
            if not schema.has_column(second):
                self.error(f"no column {second!r} in table {table!r}")
            return ColumnRef(table, second)
        hits = []
        for table in self.tables:
            if self.catalog.schema_of(table).has_column(first):
                hits.append(table)
        if not hits:
            self.error(f"unresolved column {first!r}")
        if len(hits) > 1:
            self.error(f"ambiguous column {first!r} ({', '.join(hits)})")
        return ColumnRef(hits[0], first)

    def ref_type(self, ref: ColumnRef) -> str:
        schema = self.catalog.schema_of(ref.table)
        return schema.col_type(ref.column)

    def parse_ref(self) -> ColumnRef:
        first = self.expect_name()
        second = None
        if self.peek().type == ".":
            self.next()
            second = self.expect_name()
        return self.resolve_ref(first, second)

    # -------------------------------------------------------------- grammar

    def parse(self) -> PlanNode:
        self.expect_keyword("SELECT")
        distinct = self.eat_keyword("DISTINCT")
        # FROM first so select refs can resolve against tables/aliases,
        # then rewind for the select list itself
        select_start = self.pos
        self.skip_to_from()
        self.expect_keyword("FROM")
        plan = self.parse_from()
        after_from = self.pos
        self.pos = select_start
        items = self.parse_select_list()
        if not self.at_keyword("FROM"):
            self.error("expected FROM")
        self.pos = after_from
        if self.eat_keyword("WHERE"):
            plan = FilterNode(self.parse_or(), plan)
        group_refs = []
        if self.eat_keyword("GROUP"):
            self.expect_keyword("BY")
            group_refs.append(self.parse_ref())
            while self.peek().type == ",":
                self.next()
                group_refs.append(self.parse_ref())
        plan = self.apply_select(plan, items, group_refs)
        if distinct:
            plan = OtherNode("distinct", None, plan)
        if self.eat_keyword("ORDER"):
            self.expect_keyword("BY")
            plan = OtherNode("sort", tuple(self.parse_order_items(plan)), plan)
        if self.eat_keyword("LIMIT"):
            t = self.expect("number")
            if not isinstance(t.value, int) or t.value < 0:
                self.error("LIMIT wants a non-negative integer", t)
            plan = OtherNode("limit", t.value, plan)
        if self.peek().type != "end":
            self.error("trailing input")
        return plan

    def skip_to_from(self):
        # paren depth only comes from aggregate calls here
        depth = 0
        pos = self.pos
        while pos < len(self.tokens):
            t = self.tokens[pos]
            if t.type == "(":
                depth += 1
            elif t.type == ")":
                depth -= 1
            elif depth == 0 and t.type == "ident" and t.value.upper() == "FROM":
                self.pos = pos
                return
            pos += 1
        self.error("expected FROM")

    def parse_select_list(self):
        if self.peek().type == "*":
            self.next()
            return ["*"]
        items = [self.parse_select_item()]
        while self.peek().type == ",":
            self.next()
            items.append(self.parse_select_item())
        return items

    def parse_select_item(self):
        t = self.peek()
        if t.type == "ident" and t.value.upper() in _AGG_FUNCS:
            nxt = self.tokens[self.pos + 1]
            if nxt.type == "(":
                return self.parse_agg()
        return self.parse_ref()

    def parse_agg(self) -> AggSpec:
        func = self.next().value.lower()
        self.expect("(")
        if self.peek().type == "*":
            if func != "count":
                self.error(f"{func}(*) is not a thing")
            self.next()
            self.expect(")")
            return AggSpec("count", None)
        distinct = self.eat_keyword("DISTINCT")
        ref = self.parse_ref()
        self.expect(")")
        if distinct and func != "count":
            self.error("DISTINCT inside an aggregate only works with COUNT")
        rtype = self.ref_type(ref)
        if func in ("sum", "avg") and rtype not in (INT64, FLOAT64):
            self.error(f"{func} needs a numeric column, {ref.text} is {rtype}")
        return AggSpec(func, ref, distinct)

    def parse_from(self) -> PlanNode:
        plan, tables_so_far = self.parse_table_ref()
        while True:
            if self.at_keyword("INNER"):
                self.next()
                self.expect_keyword("JOIN")
            elif self.at_keyword("JOIN"):
                self.next()
            else:
                break
            right, right_table = self.parse_table_ref()
            self.expect_keyword("ON")
            a = self.parse_ref()
            eq = self.expect("op")  # only equality joins
            if eq.value != "=":
                self.error("join condition must be an equality", eq)
            b = self.parse_ref()
            if a.table in tables_so_far and b.table in right_table:
                lk, rk = a, b
            elif b.table in tables_so_far and a.table in right_table:
                lk, rk = b, a
            else:
                self.error("join condition must reference both sides")
            lt, rt = self.ref_type(lk), self.ref_type(rk)
            if (lt == TEXT) != (rt == TEXT) or (lt == BOOL) != (rt == BOOL):
                self.error(f"join key types differ: {lk.text} is {lt}, {rk.text} is {rt}")
            plan = JoinNode(lk, rk, plan, right)
            tables_so_far |= right_table
        return plan

    def parse_table_ref(self):
        name = self.expect_name()
        if not self.catalog.has_table(name):
            self.error(f"unknown table {name!r}")
        alias = name
        t = self.peek()
        if t.type == "ident" and t.value.upper() not in _KEYWORDS:
            alias = self.next().value.lower()
        if name in self.tables:
            self.error(f"table {name!r} appears twice; self-joins are not supported")
        if alias in self.aliases:
            self.error(f"duplicate alias {alias!r}")
        self.tables.append(name)
        self.aliases[alias] = name
        if alias != name:
            # the bare table name still resolves when unambiguous
            self.aliases.setdefault(name, name)
        schema = self.catalog.schema_of(name)
        out = [OutCol(f"{name}.{c.name}", c.name, c.type) for c in schema.columns]
        return ScanNode(name, out), {name}

    # -------------------------------------------------------- select shaping

    def apply_select(self, plan, items, group_refs):
        has_agg = any(isinstance(i, AggSpec) for i in items)
        if not has_agg and not group_refs:
            if items == ["*"]:
                cols = list(plan.output)
            else:
                cols = [
                    OutCol(r.text, r.column, self.ref_type(r)) for r in items
                ]
            return ProjectNode(tuple(self._dedupe_names(cols)), plan)

        if "*" in items:
            self.error("* cannot be mixed with aggregates or GROUP BY")
        group_sorted = tuple(sorted(group_refs, key=lambda r: r.text))
        group_keys = {r.text for r in group_sorted}
        aggs = []
        for it in items:
            if isinstance(it, AggSpec):
                aggs.append(it)
            elif it.text not in group_keys:
                self.error(f"column {it.text} must appear in GROUP BY")
        aggs_sorted = tuple(
            sorted(set(aggs), key=lambda a: a.canonical())
        )
        if not aggs_sorted and not group_sorted:
            self.error("nothing to aggregate")
        ua = AggregateNode(group_sorted, aggs_sorted, plan)
        want = [
            it.canonical() if isinstance(it, AggSpec) else it.text
            for it in items
        ]
        if want == [c.key for c in ua.output]:
            return ua
        by_key = {c.key: c for c in ua.output}
        cols = [by_key[k] for k in want]
        return ProjectNode(tuple(self._dedupe_names(cols)), ua)

    @staticmethod
    def _dedupe_names(cols):
        seen = {}
        for c in cols:
            seen[c.name] = seen.get(c.name, 0) + 1
        out = []
        for c in cols:
            if seen[c.name] > 1 and "." in c.key:
                out.append(OutCol(c.key, c.key, c.ctype))
            else:
                out.append(c)
        return out

    def parse_order_items(self, plan):
        keys = {c.key for c in plan.output}
        names = {c.name: c.key for c in plan.output}
        items = []
        while True:
            t = self.peek()
            if t.type == "ident" and t.value.upper() in _AGG_FUNCS and \
                    self.tokens[self.pos + 1].type == "(":
                key = self.parse_agg().canonical()
            else:
                first = self.expect_name()
                second = None
                if self.peek().type == ".":
                    self.next()
                    second = self.expect_name()
                if second is not None:
                    table = self.aliases.get(first)
                    if table is None:
                        self.error(f"unknown table or alias {first!r}")
                    key = f"{table}.{second}"
                else:
                    key = names.get(first)
                    if key is None:
                        ref = self.resolve_ref(first, None)
                        key = ref.text
            if key not in keys:
                self.error(f"ORDER BY column {key!r} is not in the output")
            direction = "asc"
            if self.eat_keyword("DESC"):
                direction = "desc"
            else:
                self.eat_keyword("ASC")
            items.append((key, direction))
            if self.peek().type != ",":
                break
            self.next()
        return items

    # ------------------------------------------------------------ predicates

    def parse_or(self):
        parts = [self.parse_and()]
        while self.eat_keyword("OR"):
            parts.append(self.parse_and())
        return parts[0] if len(parts) == 1 else OrPred(tuple(parts))

    def parse_and(self):
        parts = [self.parse_unary()]
        while self.eat_keyword("AND"):
            parts.append(self.parse_unary())
        return parts[0] if len(parts) == 1 else AndPred(tuple(parts))

    def parse_unary(self):
        if self.peek().type == "(":
            self.next()
            p = self.parse_or()
            self.expect(")")
            return p
        if self.at_keyword("SEMANTIC_LIKE"):
            tok = self.next()
            self.expect("(")
            ref = self.parse_ref()
            if self.ref_type(ref) != TEXT:
                self.error(f"SEMANTIC_LIKE needs a text column, got {ref.text}", tok)
            self.expect(",")
            phrase = self.expect("string").value
            self.expect(",")
            t = self.expect("number")
            thr = float(t.value)
            if not 0.0 <= thr <= 1.0:
                self.error("SEMANTIC_LIKE threshold must be in [0, 1]", t)
            self.expect(")")
            return SemanticLikePred(ref, phrase, thr)
        return self.parse_comparison()

    def parse_comparison(self):
        ref = self.parse_ref()
        rtype = self.ref_type(ref)
        if self.eat_keyword("LIKE"):
            if rtype != TEXT:
                self.error(f"LIKE needs a text column, {ref.text} is {rtype}")
            pattern = self.expect("string").value
            return LikePred(ref, pattern)
        if self.eat_keyword("IN"):
            self.expect("(")
            values = [self.coerce_literal(self.parse_literal(), rtype, ref)]
            while self.peek().type == ",":
                self.next()
                values.append(self.coerce_literal(self.parse_literal(), rtype, ref))
            self.expect(")")
            return InPred(ref, tuple(values))
        t = self.peek()
        if t.type != "op":
            self.error("expected a comparison operator")
        op = self.next().value
        lit = self.coerce_literal(self.parse_literal(), rtype, ref)
        if rtype == BOOL and op not in ("=", "!="):
            self.error(f"ordering comparison on boolean column {ref.text}")
        return Comparison(ref, op, lit)

    def parse_literal(self):
        t = self.peek()
        if t.type in ("-", "+"):
            sign = -1 if t.type == "-" else 1
            self.next()
            num = self.expect("number")
            return sign * num.value
        if t.type == "number":
            return self.next().value
        if t.type == "string":
            return self.next().value
        if self.at_keyword("TRUE"):
            self.next()
            return True
        if self.at_keyword("FALSE"):
            self.next()
            return False
        if t.type == "ident":
            self.error(f"expected a literal, got identifier {t.value!r}")
        self.error("expected a literal")

    def coerce_literal(self, value, rtype, ref):
        if rtype == INT64:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                self.error(f"literal {value!r} does not match {ref.text} ({rtype})")
            return value  # float vs int column compares numerically
        if rtype == FLOAT64:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                self.error(f"literal {value!r} does not match {ref.text} ({rtype})")
            return float(value)
        if rtype == TEXT:
            if not isinstance(value, str):
                self.error(f"literal {value!r} does not match {ref.text} ({rtype})")
            return value
        if rtype == BOOL:
            if not isinstance(value, bool):
                self.error(f"literal {value!r} does not match {ref.text} ({rtype})")
            return value
        self.error(f"unsupported column type {rtype}")


def parse_sql(text: str, catalog) -> PlanNode:
    """Parse and resolve `text` against `catalog`, returning a logical plan.

    The result has source ordering (conjunct order, join order as written);
    run it through canonicalize() before fingerprinting or caching.
    """
    if not isinstance(text, str) or not text.strip():
        raise SqlError("empty query text")
    return _Parser(text, catalog).parse()
