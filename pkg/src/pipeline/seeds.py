"""
Dérivation des graines : une graine maître -> une graine par (étape, indice)

seed = splitmix64(master ^ fnv1a64(étape) ^ splitmix64(indice))
Changer l'indice d'une étape ne perturbe aucune autre étape.
"""

MASK64 = (1 << 64) - 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def splitmix64(value: int) -> int:
    """Finaliseur splitmix64 sur 64 bits"""
    z = (value + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    h = FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def derive_seed(master: int, stage: str, index: int = 0) -> int:
    """Graine 64 bits d'une étape nommée"""
    return splitmix64((int(master) & MASK64) ^ fnv1a64(stage) ^ splitmix64(int(index) & MASK64))
