#!/usr/bin/env python3
"""Regenerate the toy pipeline fixtures under tests/fixtures/toy.

The corpus is five small stdin problems. Each problem gets four scripted
provider samples (two providers, two samples each) that exercise every
perturbation path: an in-budget rewrite, an over-budget rewrite or an
unparsable response, an exact duplicate, and a second in-budget rewrite.
The script asserts every intended description distance against the real
metric before writing anything, so the fixtures cannot drift out of the
epsilon budget silently.
"""

from __future__ import annotations

import json
import os
import shutil
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from ctfkit.metrics import DEFAULT_EPSILON, normalized_levenshtein

ROOT = os.path.normpath(os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures", "toy"))


def solution(body: str) -> dict[str, str]:
    return {"language_tag": "python", "body": body}


def cases(*pairs: tuple[str, str]) -> list[dict[str, str]]:
    return [{"input": i, "output": o, "testtype": "stdin"} for i, o in pairs]


ABC_ORIGINAL = (
    "You are given a single line containing a string s of length three. The string is "
    "always a permutation of the characters a, b and c. Decide whether it is possible to "
    "turn s into the exact string abc by performing at most one swap of any two characters "
    "in s. A swap exchanges the characters at two chosen positions of the string. Print "
    "YES if it can be done and NO otherwise, followed by a newline."
)
ABC_CTF = ABC_ORIGINAL.replace(
    "one swap of any two characters in s", "one swap of two adjacent characters in s"
).replace("at two chosen positions", "at two adjacent positions")
ABC_ROBUST = ABC_ORIGINAL.replace("if it can be done", "if it is possible")

ADD_ORIGINAL = (
    "Read a single integer n from standard input. The value may be negative and has at "
    "most nine digits. Compute the integer that is exactly one greater than n and print "
    "it on its own line. Do not print anything else: the input always contains exactly "
    "one integer and the output must be a single number followed by a newline."
)
ADD_CTF = ADD_ORIGINAL.replace("exactly one greater than n", "exactly one less than n")
ADD_ROBUST = ADD_ORIGINAL.replace("Do not print anything else", "Do not output anything else")
ADD_FAR = (
    "Read two integers a and b from one line of standard input, separated by a single "
    "space. Both values are positive and fit in sixty four bits. Compute the greatest "
    "common divisor of a and b with any method you like and print the result on its own "
    "line without any extra text around the number."
)

SUM_ORIGINAL = (
    "The input is one line holding a list of integers separated by single spaces. The "
    "list has between one and fifty entries and every entry fits in a 32 bit signed "
    "integer. Compute the sum of all the integers in the list and write the result to "
    "standard output on a single line. Trailing whitespace at the end of the input line "
    "should be ignored."
)
SUM_CTF = SUM_ORIGINAL.replace(
    "Compute the sum of all the integers", "Compute the product of all the integers"
)
SUM_ROBUST = SUM_ORIGINAL.replace(
    "write the result to standard output", "print the result to standard output"
)
SUM_FAR = (
    "Given one line with one lowercase word per token, sort the tokens in strictly "
    "lexicographic order and join them with single commas before printing the joined "
    "result on one line. The number of tokens never exceeds forty and every token "
    "consists only of ascii letters."
)

MAX_ORIGINAL = (
    "You receive one line of input containing several integers separated by spaces. "
    "There is at least one integer on the line and there are never more than one "
    "hundred of them. Find the largest value among the given integers and print that "
    "value on a line of its own. The program must not print any prompt or label, only "
    "the number."
)
MAX_CTF_A = MAX_ORIGINAL.replace("Find the largest value", "Find the smallest value")
MAX_CTF_B = MAX_ORIGINAL.replace("Find the largest value", "Find the lowest value")
MAX_FAR = (
    "You receive one line of text containing words separated by spaces. Reverse the "
    "order of the words while keeping each individual word unchanged, then print the "
    "reversed sequence joined by single spaces. The line holds at most one hundred "
    "words and is never empty."
)

VOWEL_ORIGINAL = (
    "The input consists of a single line containing a lowercase word made only of the "
    "letters a to z. Count how many characters of the word are vowels, where the vowels "
    "are a, e, i, o and u. Print the resulting count as a decimal number on its own "
    "line. The word is never empty and never longer than two hundred characters."
)
VOWEL_CTF = VOWEL_ORIGINAL.replace(
    "Count how many characters of the word are vowels",
    "Count the number of characters of the word that are vowels",
)
VOWEL_ROBUST = VOWEL_ORIGINAL.replace("Print the resulting count", "Print the final count")
VOWEL_FAR = (
    "The input is a single line holding a lowercase word. Build and print the word that "
    "results from deleting every vowel from the original while keeping all consonants in "
    "their current order. When everything is deleted print an empty line. Vowels are the "
    "five letters a, e, i, o and u."
)

PROBLEMS = [
    {
        "id": "abc-swap",
        "question_content": ABC_ORIGINAL,
        "starter_code": "",
        "public_test_cases": cases(
            ("abc\n", "YES\n"),
            ("acb\n", "YES\n"),
            ("bac\n", "YES\n"),
            ("bca\n", "NO\n"),
            ("cab\n", "NO\n"),
            ("cba\n", "YES\n"),
        ),
        "solution": solution(
            "import sys\n"
            "\n"
            "s = sys.stdin.read().strip()\n"
            'mismatches = sum(1 for x, y in zip(s, "abc") if x != y)\n'
            'print("YES" if mismatches in (0, 2) else "NO")\n'
        ),
        "metadata": {},
    },
    {
        "id": "add-one",
        "question_content": ADD_ORIGINAL,
        "starter_code": "",
        "public_test_cases": cases(
            ("5\n", "6\n"),
            ("0\n", "1\n"),
            ("-3\n", "-2\n"),
            ("41\n", "42\n"),
        ),
        "solution": solution("import sys\n\nprint(int(sys.stdin.read().strip()) + 1)\n"),
        "metadata": {},
    },
    {
        "id": "sum-list",
        "question_content": SUM_ORIGINAL,
        "starter_code": "",
        "public_test_cases": cases(
            ("1 2 3 4\n", "10\n"),
            ("5\n", "5\n"),
            ("2 2 2\n", "6\n"),
            ("10 0 7\n", "17\n"),
        ),
        "solution": solution(
            "import sys\n\nprint(sum(int(tok) for tok in sys.stdin.read().split()))\n"
        ),
        "metadata": {},
    },
    {
        "id": "max-val",
        "question_content": MAX_ORIGINAL,
        "starter_code": "",
        "public_test_cases": cases(
            ("3 1 4 1 5\n", "5\n"),
            ("7\n", "7\n"),
            ("9 2 8\n", "9\n"),
            ("0 5 2\n", "5\n"),
        ),
        "solution": solution(
            "import sys\n\nprint(max(int(tok) for tok in sys.stdin.read().split()))\n"
        ),
        "metadata": {},
    },
    {
        "id": "count-vowels",
        "question_content": VOWEL_ORIGINAL,
        "starter_code": "",
        "public_test_cases": cases(
            ("hello\n", "2\n"),
            ("rhythm\n", "0\n"),
            ("aeiou\n", "5\n"),
            ("banana\n", "3\n"),
        ),
        "solution": solution(
            "import sys\n"
            "\n"
            "word = sys.stdin.read().strip()\n"
            'print(sum(1 for ch in word if ch in "aeiou"))\n'
        ),
        "metadata": {},
    },
]

# provider -> sample index -> response kind per problem id
UNPARSABLE = "The model refused to produce structured output for this sample.\n"

RESPONSES = {
    "abc-swap": {
        ("alpha", 0): ABC_CTF,
        ("alpha", 1): None,  # unparsable: no marker at all
        ("beta", 0): ABC_CTF,  # duplicate of alpha 0, dropped by dedup
        ("beta", 1): ABC_ROBUST,
    },
    "add-one": {
        ("alpha", 0): ADD_CTF,
        ("alpha", 1): ADD_FAR,
        ("beta", 0): ADD_CTF,
        ("beta", 1): ADD_ROBUST,
    },
    "sum-list": {
        ("alpha", 0): SUM_CTF,
        ("alpha", 1): SUM_FAR,
        ("beta", 0): SUM_CTF,
        ("beta", 1): SUM_ROBUST,
    },
    "max-val": {
        ("alpha", 0): MAX_CTF_A,
        ("alpha", 1): MAX_FAR,
        ("beta", 0): MAX_CTF_A,
        ("beta", 1): MAX_CTF_B,
    },
    "count-vowels": {
        ("alpha", 0): VOWEL_CTF,
        ("alpha", 1): VOWEL_FAR,
        ("beta", 0): VOWEL_CTF,
        ("beta", 1): VOWEL_ROBUST,
    },
}

# candidates the scripted annotators will mark as counterfactual, with the
# replacement solution each one gets
CTF_SOLUTIONS = {
    ("abc-swap", "alpha", 0): (
        "import sys\n"
        "\n"
        "s = sys.stdin.read().strip()\n"
        "\n"
        "\n"
        "def reachable(text):\n"
        '    if text == "abc":\n'
        "        return True\n"
        "    for i in range(len(text) - 1):\n"
        "        swapped = list(text)\n"
        "        swapped[i], swapped[i + 1] = swapped[i + 1], swapped[i]\n"
        '        if "".join(swapped) == "abc":\n'
        "            return True\n"
        "    return False\n"
        "\n"
        "\n"
        'print("YES" if reachable(s) else "NO")\n'
    ),
    ("add-one", "alpha", 0): "import sys\n\nprint(int(sys.stdin.read().strip()) - 1)\n",
    ("sum-list", "alpha", 0): (
        "import math\n"
        "import sys\n"
        "\n"
        "print(math.prod(int(tok) for tok in sys.stdin.read().split()))\n"
    ),
    ("max-val", "alpha", 0): (
        "import sys\n\nprint(min(int(tok) for tok in sys.stdin.read().split()))\n"
    ),
    ("max-val", "beta", 1): (
        "import sys\n"
        "\n"
        "values = sorted(int(tok) for tok in sys.stdin.read().split())\n"
        "print(values[0])\n"
    ),
    # behaviorally identical to the original on purpose: a pair whose
    # reconstructed suite never diverges from the inherited one
    ("count-vowels", "alpha", 0): (
        "import sys\n"
        "\n"
        "text = sys.stdin.read().strip()\n"
        'vowels = set("aeiou")\n'
        "total = 0\n"
        "for ch in text:\n"
        "    if ch in vowels:\n"
        "        total += 1\n"
        "print(total)\n"
    ),
}

CONFIG = {
    "corpus": "corpus.jsonl",
    "out_dir": "out",
    "test_mode": True,
    "workers": 1,
    "objective": {"epsilon": 0.13, "lambda": 1.2},
    "sampler": {"samples_per_provider": 2},
    "providers": [
        {"kind": "scripted", "id": "alpha", "directory": "responses/alpha"},
        {"kind": "scripted", "id": "beta", "directory": "responses/beta"},
    ],
    "limits": {"wall_time_s": 5.0, "memory_bytes": 268435456, "output_cap_bytes": 65536},
    "annotation": {"trial_size": 0, "auto_solutions": "solutions"},
    "evaluation": {
        "adapters": [{"kind": "mimic-original"}, {"kind": "reference"}],
        "include_divergence": True,
    },
    "embeddings": {"dim": 256},
}


def check_budgets() -> None:
    eps = DEFAULT_EPSILON
    by_id = {p["id"]: p["question_content"] for p in PROBLEMS}
    far_texts = {ADD_FAR, SUM_FAR, MAX_FAR, VOWEL_FAR}
    for pid, table in RESPONSES.items():
        for (provider, k), text in table.items():
            if text is None:
                continue
            dq = normalized_levenshtein(by_id[pid], text)
            if text in far_texts:
                assert dq > eps, f"{pid} {provider}:{k} meant to exceed epsilon, got {dq:.4f}"
            else:
                assert dq <= eps, f"{pid} {provider}:{k} blew the budget: {dq:.4f}"


def response_text(question: str, preamble: str) -> str:
    payload = json.dumps(
        {"question_content": question, "starter_code": ""}, ensure_ascii=False, indent=2
    )
    return f"{preamble}\n\n###Counterfactual Problem\n{payload}\n"


def write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def main() -> None:
    check_budgets()
    if os.path.isdir(ROOT):
        shutil.rmtree(ROOT)
    lines = [json.dumps(p, ensure_ascii=False, separators=(",", ":")) for p in PROBLEMS]
    write(os.path.join(ROOT, "corpus.jsonl"), "\n".join(lines) + "\n")
    write(
        os.path.join(ROOT, "config.json"),
        json.dumps(CONFIG, ensure_ascii=False, indent=2) + "\n",
    )
    for pid, table in RESPONSES.items():
        for (provider, k), text in table.items():
            path = os.path.join(ROOT, "responses", provider, f"{pid}__{k}.txt")
            if text is None:
                write(path, UNPARSABLE)
            elif (provider, k) == ("beta", 0):
                write(path, response_text(text, "A second opinion that landed on the same rewrite."))
            else:
                write(path, response_text(text, "Here is the rewritten problem statement."))
    for (pid, provider, k), body in CTF_SOLUTIONS.items():
        write(os.path.join(ROOT, "solutions", f"{pid}__{provider}__{k}.py"), body)
    print(f"wrote toy fixtures under {ROOT}")


if __name__ == "__main__":
    main()
