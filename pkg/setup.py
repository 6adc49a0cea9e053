#!/usr/bin/env python3

from setuptools import setup, find_packages

setup(name='aglr',
      version='0.1.0',
      description='Generative latent replay for domain-incremental multiple instance learning',
      packages=find_packages(exclude=['tests']),
      data_files=[('config',['aglrrc'])],
      scripts=['aglr'],
      install_requires=['numpy','scipy'],
      extras_require={'test' : ['pytest']}
     )

print("")
print("See aglrrc for the default settings, and make your own in ~/.aglrrc")
print("")
