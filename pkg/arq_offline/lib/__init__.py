# -*- coding: UTF-8 -*-
from arq_offline.lib.constants import const
