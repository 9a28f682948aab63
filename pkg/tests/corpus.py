"""A 30-file source corpus exercising the chunker's edge cases."""

from __future__ import annotations

from conftest import ORDERS_ORIGINAL

_long_body = "".join(f"    x{i} = {i}\n" for i in range(450))

CORPUS: dict[str, str] = {
    "orders.py": ORDERS_ORIGINAL,
    "empty.py": "",
    "only_comments.py": "# a\n# b\n",
    "imports.py": "import os\nimport sys\n\nVALUE = 3\n",
    "three.py": "def a():\n    return 1\n\n\ndef b():\n    return 2\n\n\ndef c():\n    return 3\n",
    "decorated.py": "import functools\n\n\n@functools.lru_cache\ndef cached(x):\n    return x\n",
    "async_fn.py": "async def fetch(url):\n    return await get(url)\n",
    "nested_class.py": (
        "class Outer:\n"
        '    """Outer docs."""\n'
        "    LIMIT = 3\n\n"
        "    class Inner:\n"
        "        pass\n\n"
        "    def method(self):\n"
        "        return self.LIMIT\n\n"
        "    ATTR_AFTER = 1\n\n"
        "    @property\n"
        "    def prop(self):\n"
        "        return 2\n"
    ),
    "docstring_mod.py": '"""Module docs."""\n\n\ndef f():\n    """Function docs."""\n    return 0\n',
    "crlf.py": "def a():\r\n    return 1\r\n\r\ndef b():\r\n    return 2\r\n",
    "no_newline.py": "def a():\n    return 1",
    "syntax_error.py": "def broken(:\n    pass\n",
    "unicode.py": "# ünïcödé\ndef grüß():\n    return 'héllo'\n",
    "comment_between.py": "def a():\n    pass\n# about b\n# more about b\ndef b():\n    pass\n",
    "trailing_code.py": "def a():\n    pass\n\nprint(a())\nif __name__ == '__main__':\n    a()\n",
    "long_fn.py": "def huge():\n" + _long_body + "    return 0\n",
    "methods_only.py": "class A:\n    def one(self):\n        pass\n\n    def two(self):\n        pass\n",
    "class_attrs.py": "class Config:\n    a = 1\n    b = 2\n",
    "dupes.py": "def same():\n    pass\n\n\ndef same():\n    pass\n",
    "lambda_assign.py": "handler = lambda x: x\nitems = [1, 2]\n",
    "pkg/__init__.py": "from .core import run\n",
    "pkg/core.py": "def run():\n    return helper()\n\n\ndef helper():\n    return 1\n",
    "pkg/sub/deep.py": "class Deep:\n    def walk(self):\n        return 'down'\n",
    "script.sh": "#!/bin/sh\necho hi\n",
    "README.md": "# Title\n\nSome text.\n",
    "data.json": '{"a": 1}\n',
    "Main.java": "class Main {\n  public static void main(String[] a) {}\n}\n",
    "app.js": "function f() {\n  return 1;\n}\n",
    "blank_lines.py": "\n\n\ndef a():\n    pass\n\n\n\n",
    "tabs.py": "def a():\n\treturn 1\n\nclass B:\n\tdef c(self):\n\t\treturn 2\n",
}

assert len(CORPUS) == 30
