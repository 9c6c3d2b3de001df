// SPDX-License-Identifier: GPL-2.0-only
/*
 * Copyright (C) 2001, 2002 Sistina Software (UK) Limited.
 * Copyright (C) 2004-2008 Red Hat, Inc. All rights reserved.
 *
 * This file is released under the GPL.
 */

#include "dm-core.h"
#include "dm-uevent.h"

#include <linux/kernel.h>
#include <linux/fs.h>

#define DM_MSG_PREFIX "core"
#define DM_ANY_MINOR (-1)

static int major;

static int dm_blk_open(struct inode *inode, struct file *filp)
{
	struct mapped_device *md = filp->private_data;

	if (!md)
		return -ENXIO;
	md->open_count++;
	return 0;
}

static int dm_blk_close(struct inode *inode, struct file *filp)
{
	struct mapped_device *md = filp->private_data;

	md->open_count--;
	return 0;
}

struct block_device_operations {
	int (*open)(struct inode *, struct file *);
	int (*release)(struct inode *, struct file *);
};

static const struct block_device_operations dm_blk_dops = {
	.open = dm_blk_open,
	.release = dm_blk_close,
};

static struct mapped_device *alloc_dev(int minor)
{
	struct mapped_device *md = kzalloc(sizeof(*md), GFP_KERNEL);

	if (!md)
		return NULL;
	md->open_count = 0;
	return md;
}

int dm_create(int minor, struct mapped_device **result)
{
	struct mapped_device *md;

	md = alloc_dev(minor);
	if (!md)
		return -ENXIO;

	*result = md;
	return 0;
}

void dm_put(struct mapped_device *md)
{
	md->open_count--;
}
