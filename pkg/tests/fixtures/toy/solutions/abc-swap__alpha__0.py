import sys

s = sys.stdin.read().strip()


def reachable(text):
    if text == "abc":
        return True
    for i in range(len(text) - 1):
        swapped = list(text)
        swapped[i], swapped[i + 1] = swapped[i + 1], swapped[i]
        if "".join(swapped) == "abc":
            return True
    return False


print("YES" if reachable(s) else "NO")
