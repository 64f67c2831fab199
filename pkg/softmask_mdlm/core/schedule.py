"""
Agendamento de ruído com estado absorvente e as quantidades fechadas de
corrupção, posterior e revelação. Tempo contínuo em [0, 1] (T normalizado).
"""
from abc import ABC, abstractmethod

import torch

from softmask_mdlm.core.errors import DomainError


class NoiseSchedule(ABC):
    """Interface de um agendamento alpha(t) estritamente decrescente com alpha(0)=1, alpha(1)=0"""

    @abstractmethod
    def _alpha(self, t):
        ...

    @staticmethod
    def _checar_tempo(t):
        if torch.is_tensor(t):
            if bool(((t < 0) | (t > 1)).any()):
                raise DomainError("t fora de [0, 1]")
        elif not 0.0 <= t <= 1.0:
            raise DomainError(f"t={t} fora de [0, 1]")

    def alpha(self, t):
        """Probabilidade de um token sobreviver sem máscara até o tempo t"""
        self._checar_tempo(t)
        return self._alpha(t)

    def corrupt(self, x0, t, generator, mask_id, maskable=None):
        """Mascara cada posição independentemente com probabilidade 1 - alpha(t)

        Args:
            x0: ids limpos (..., L)
            t: escalar ou tensor com um tempo por sequência (formato x0.shape[:-1])
            generator: torch.Generator que fornece a aleatoriedade
            mask_id: id do token de máscara
            maskable: máscara booleana opcional; posições False nunca são corrompidas

        Returns:
            Tupla (x_t, indicador de máscara)
        """
        if bool((x0 == mask_id).any()):
            raise DomainError("x0 não pode conter o token de máscara")
        t = torch.as_tensor(t, dtype=torch.float64)
        prob_mascara = 1.0 - self.alpha(t)
        if prob_mascara.dim() > 0:
            prob_mascara = prob_mascara.unsqueeze(-1)
        u = torch.rand(x0.shape, generator=generator, dtype=torch.float64)
        mascara = u < prob_mascara
        if maskable is not None:
            mascara &= maskable
        return torch.where(mascara, torch.full_like(x0, mask_id), x0), mascara

    def posterior_mask_weights(self, s, t):
        """Pesos (x0, máscara) da posterior exata q(x_s | x_t = m, x0)"""
        if t == 0:
            raise DomainError("posterior indefinida em t = 0")
        if not 0.0 <= s < t <= 1.0:
            raise DomainError(f"exige 0 <= s < t <= 1 (recebido s={s}, t={t})")
        a_s, a_t = self.alpha(s), self.alpha(t)
        return (a_s - a_t) / (1.0 - a_t), (1.0 - a_s) / (1.0 - a_t)

    def reveal_probability(self, s, t):
        """Probabilidade por token mascarado de revelar a predição ao passar de t para s"""
        return self.posterior_mask_weights(s, t)[0]


class LinearSchedule(NoiseSchedule):
    """alpha(t) = 1 - t"""

    def _alpha(self, t):
        return 1.0 - t


LINEAR = LinearSchedule()


def alpha(t):
    return LINEAR.alpha(t)


def corrupt(x0, t, generator, mask_id, maskable=None):
    return LINEAR.corrupt(x0, t, generator, mask_id, maskable)


def posterior_mask_weights(s, t):
    return LINEAR.posterior_mask_weights(s, t)


def reveal_probability(s, t):
    return LINEAR.reveal_probability(s, t)
