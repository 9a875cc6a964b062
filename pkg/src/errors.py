"""
Hiérarchie d'exceptions de la boîte à outils volumique
Une erreur = une cause identifiable (dimensions, paramètres, format, étape)
"""


class ToolkitError(Exception):
    """Racine de toutes les erreurs levées par le paquet"""


class DimensionMismatchError(ToolkitError, ValueError):
    """Deux grilles (volume, champ, masque) n'ont pas les mêmes dimensions"""


class InvalidParameterError(ToolkitError, ValueError):
    """Paramètre hors de son domaine (beta, N, fenêtre, poids...)"""


class MissingWeakSupervisionError(InvalidParameterError):
    """Itération >= 1 sans étiquettes de supervision faible"""


class NonFiniteLossError(ToolkitError, FloatingPointError):
    """Une fonction de coût a produit NaN ou inf pendant l'optimisation"""


class UndefinedMetricError(ToolkitError, ValueError):
    """Métrique non définie (ensemble vide pour la distance de Hausdorff)"""


class FormatError(ToolkitError, ValueError):
    """Fichier illisible ou incohérent"""


class BadMagicError(FormatError):
    """Signature de fichier inattendue"""


class TruncatedPayloadError(FormatError):
    """Le fichier contient moins d'octets que l'en-tête n'en annonce"""


class UnsupportedDatatypeError(FormatError):
    """Type de données non pris en charge"""


class PipelineStageError(ToolkitError):
    """Échec d'une étape du pipeline, avec le nom de l'étape fautive"""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
