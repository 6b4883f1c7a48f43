#!/usr/bin/env python
# -*- coding: UTF-8 -*-
"""
Offline reinforcement learning with score-model support constraints
"""
from setuptools import setup, find_packages


setup(name="arq-offline",
      author="Nicholas Willhite",
      author_email='willnx84@gmail.com',
      version='2026.10.18',
      packages=find_packages(exclude=['tests']),
      include_package_data=True,
      description="Action-restricted Q-learning over in-support actions sampled from a score model",
      long_description=open('README.rst').read(),
      install_requires=['numpy', 'scipy>=1.6', 'ujson>=2.0', 'jsonschema', 'vlab-api-common'],
      entry_points={'console_scripts': ['arq-offline = arq_offline.app:main']}
      )
