/** Client-side parser for the formula input's live preview.
 *
 * Mirrors the server's expression grammar closely enough to echo a canonical
 * rendering (or a position-carrying error) while the student types; the
 * server remains the grading authority.
 */

export class FormulaError extends Error {
  constructor(message: string, public position: number) {
    super(`${message} (at offset ${position})`);
  }
}

const FUNCTIONS = new Set([
  "sin", "cos", "tan", "atan", "asin", "acos", "exp", "ln", "log10", "sqrt",
  "abs", "min", "max", "floor", "ceil", "round", "mean", "sd", "sum", "len",
  "qnorm", "qt",
]);

const ALIASES: Record<string, string> = { arctan: "atan" };

type Node =
  | { t: "num"; text: string }
  | { t: "name"; id: string }
  | { t: "unary"; op: string; operand: Node }
  | { t: "binary"; op: string; left: Node; right: Node }
  | { t: "call"; fn: string; args: Node[] };

interface Token {
  kind: "num" | "ident" | "op" | "end";
  text: string;
  pos: number;
}

const TOKEN = /\s*(?:(\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?|([A-Za-z_][A-Za-z0-9_]*)|(\|\||&&|==|!=|<=|>=|[-+*/^<>!(),]))/y;

function tokenize(text: string): Token[] {
  const tokens: Token[] = [];
  let pos = 0;
  while (pos < text.length) {
    if (/^\s*$/.test(text.slice(pos))) break; // trailing whitespace only
    TOKEN.lastIndex = pos;
    const m = TOKEN.exec(text);
    if (m === null) {
      const rel = text.slice(pos).search(/\S/);
      const at = rel === -1 ? pos : pos + rel;
      throw new FormulaError(`unexpected character '${text[at] ?? ""}'`, at);
    }
    const start = pos + (m[0].length - m[0].trimStart().length);
    if (m[1] !== undefined) tokens.push({ kind: "num", text: m[0].trim(), pos: start });
    else if (m[2] !== undefined) tokens.push({ kind: "ident", text: m[2], pos: start });
    else if (m[3] !== undefined) tokens.push({ kind: "op", text: m[3], pos: start });
    pos = TOKEN.lastIndex;
  }
  tokens.push({ kind: "end", text: "", pos: text.length });
  return tokens;
}

class Parser {
  private i = 0;
  constructor(private tokens: Token[]) {}

  private get cur(): Token {
    return this.tokens[this.i]!;
  }

  private atOp(...texts: string[]): boolean {
    return this.cur.kind === "op" && texts.includes(this.cur.text);
  }

  private next(): Token {
    return this.tokens[this.i++]!;
  }

  parse(): Node {
    const node = this.additive();
    if (this.cur.kind !== "end") {
      throw new FormulaError(`unexpected '${this.cur.text}'`, this.cur.pos);
    }
    return node;
  }

  private additive(): Node {
    let left = this.multiplicative();
    while (this.atOp("+", "-")) {
      const op = this.next().text;
      left = { t: "binary", op, left, right: this.multiplicative() };
    }
    return left;
  }

  private multiplicative(): Node {
    let left = this.unary();
    while (this.atOp("*", "/")) {
      const op = this.next().text;
      left = { t: "binary", op, left, right: this.unary() };
    }
    return left;
  }

  private unary(): Node {
    if (this.atOp("-")) {
      this.next();
      return { t: "unary", op: "-", operand: this.unary() };
    }
    return this.power();
  }

  private power(): Node {
    const base = this.atom();
    if (this.atOp("^")) {
      this.next();
      return { t: "binary", op: "^", left: base, right: this.unary() };
    }
    return base;
  }

  private atom(): Node {
    const tok = this.cur;
    if (tok.kind === "num") {
      this.next();
      return { t: "num", text: tok.text };
    }
    if (tok.kind === "ident") {
      this.next();
      if (this.atOp("(")) {
        const fn = ALIASES[tok.text.toLowerCase()] ?? tok.text.toLowerCase();
        if (!FUNCTIONS.has(fn)) {
          throw new FormulaError(`unknown function '${tok.text}'`, tok.pos);
        }
        this.next();
        const args: Node[] = [];
        if (!this.atOp(")")) {
          args.push(this.additive());
          while (this.atOp(",")) {
            this.next();
            args.push(this.additive());
          }
        }
        if (!this.atOp(")")) {
          throw new FormulaError("expected ')'", this.cur.pos);
        }
        this.next();
        return { t: "call", fn, args };
      }
      return { t: "name", id: tok.text };
    }
    if (this.atOp("(")) {
      this.next();
      const inner = this.additive();
      if (!this.atOp(")")) {
        throw new FormulaError("expected ')'", this.cur.pos);
      }
      this.next();
      return inner;
    }
    if (tok.kind === "end") {
      throw new FormulaError("unexpected end of input", tok.pos);
    }
    throw new FormulaError(`unexpected '${tok.text}'`, tok.pos);
  }
}

const PREC: Record<string, number> = { "+": 5, "-": 5, "*": 6, "/": 6, "^": 8 };

function prec(node: Node): number {
  if (node.t === "binary") return PREC[node.op] ?? 9;
  if (node.t === "unary") return 7;
  return 9;
}

function serialize(node: Node): string {
  switch (node.t) {
    case "num":
      return node.text;
    case "name":
      return node.id;
    case "unary": {
      const inner = serialize(node.operand);
      return prec(node.operand) < 7 ? `-(${inner})` : `-${inner}`;
    }
    case "binary": {
      const mine = PREC[node.op]!;
      let left = serialize(node.left);
      let right = serialize(node.right);
      if (node.op === "^") {
        if (prec(node.left) <= mine) left = `(${left})`;
        if (prec(node.right) < mine) right = `(${right})`;
      } else {
        if (prec(node.left) < mine) left = `(${left})`;
        if (prec(node.right) <= mine) right = `(${right})`;
      }
      return `${left}${node.op}${right}`;
    }
    case "call":
      return `${node.fn}(${node.args.map(serialize).join(",")})`;
  }
}

/** Canonical rendering of the typed formula; throws FormulaError when invalid. */
export function previewFormula(text: string): string {
  if (text.trim() === "") {
    throw new FormulaError("empty input", 0);
  }
  return serialize(new Parser(tokenize(text)).parse());
}
